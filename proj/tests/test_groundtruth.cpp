#include "sfanet/groundtruth.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sfanet;

namespace {

PointAnnotation random_annotation(std::mt19937_64& rng, int max_size, int max_heads, bool border) {
  std::uniform_int_distribution<int> size(1, max_size), heads(0, max_heads);
  PointAnnotation a;
  a.width = size(rng);
  a.height = size(rng);
  const int n = heads(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    Point p{u(rng) * (a.width - 1), u(rng) * (a.height - 1)};
    if (border && i % 3 == 0) p.x = (i % 2) ? 0.0 : a.width - 1;
    if (border && i % 5 == 0) p.y = (i % 2) ? a.height - 1 : 0.0;
    a.points.push_back(p);
  }
  return a;
}

std::vector<std::pair<double, double>> heads(const PointAnnotation& a) {
  std::vector<std::pair<double, double>> h;
  for (const auto& p : a.points) h.emplace_back(p.x, p.y);
  return h;
}

double max_diff(const Map2D& m, const oracle::Grid& g) {
  double d = 0.0;
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) d = std::max(d, std::abs(m(y, x) - g.at(y, x)));
  return d;
}

}  // namespace

TEST(RenderDensity, EmptyAnnotationIsZero) {
  PointAnnotation a{"e", 20, 10, {}};
  const auto d = render_density(a);
  EXPECT_EQ(d.values.rows(), 10);
  EXPECT_EQ(d.values.cols(), 20);
  EXPECT_EQ(d.sum(), 0.0);
}

TEST(RenderDensity, CenteredHeadHasUnitMassAndCentralPeak) {
  PointAnnotation a{"c", 41, 41, {{20, 20}}};
  for (const auto& k : {KernelSpec{15, 4.0}, KernelSpec{3, 2.0}, KernelSpec{31, 8.75}}) {
    const auto d = render_density(a, k);
    EXPECT_NEAR(d.sum(), 1.0, 1e-9);
    Eigen::Index r, c;
    d.values.maxCoeff(&r, &c);
    EXPECT_EQ(r, 20);
    EXPECT_EQ(c, 20);
  }
}

TEST(RenderDensity, CornerHeadKeepsCount) {
  PointAnnotation a{"k", 30, 20, {{0, 0}, {15.2, 9.7}, {29, 19}}};
  EXPECT_NEAR(render_density(a).sum(), 3.0, 1e-6);
}

TEST(RenderDensity, RejectsBadKernel) {
  PointAnnotation a{"b", 5, 5, {{2, 2}}};
  EXPECT_THROW(render_density(a, KernelSpec{4, 1.0}), std::invalid_argument);
  EXPECT_THROW(render_density(a, KernelSpec{3, 0.0}), std::invalid_argument);
}

TEST(RenderDensity, CountConservationOnRandomAnnotations) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_annotation(rng, 256, 50, true);
    EXPECT_NEAR(render_density(a).sum(), static_cast<double>(a.count()), 1e-6);
  }
}

TEST(RenderDensity, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_annotation(rng, 32, 5, i % 2 == 0);
    const auto d = render_density(a);
    EXPECT_LT(max_diff(d.values, oracle::density(a.height, a.width, heads(a), 15, 4.0)), 1e-10);
  }
}

TEST(AdaptiveKernel, Formula) {
  const auto k1024 = adaptive_kernel(1024);
  EXPECT_EQ(k1024.mu, 15);
  EXPECT_DOUBLE_EQ(k1024.rho, 4.75);
  const auto k2048 = adaptive_kernel(2048);
  EXPECT_EQ(k2048.mu, 31);
  EXPECT_DOUBLE_EQ(k2048.rho, 8.75);
  const auto k64 = adaptive_kernel(64);
  EXPECT_EQ(k64.mu, 1);
  EXPECT_DOUBLE_EQ(k64.rho, 1.25);
  for (int w = 1; w < 5000; w += 37) EXPECT_EQ(adaptive_kernel(w).mu % 2, 1);
  EXPECT_THROW(adaptive_kernel(0), std::invalid_argument);
}

TEST(RenderAttention, ZeroDensityGivesZeroMask) {
  DensityMap d{Map2D::Zero(8, 9)};
  EXPECT_EQ(render_attention(d).values.sum(), 0.0);
}

TEST(RenderAttention, SingleHeadPatchMatchesOracle) {
  PointAnnotation a{"s", 31, 31, {{15, 15}}};
  const auto d = render_density(a);
  const auto att = render_attention(d, KernelSpec{3, 2.0}, 1e-3);
  oracle::Grid g(31, 31);
  g.v.assign(d.values.data(), d.values.data() + d.values.size());
  EXPECT_EQ(max_diff(att.values, oracle::attention(g, 3, 2.0, 1e-3)), 0.0);
  EXPECT_GT(att.values.sum(), 0.0);
  EXPECT_EQ(att.values(15, 15), 1.0);
  EXPECT_EQ(att.values(0, 0), 0.0);
}

TEST(RenderAttention, ThresholdAboveMaximumGivesZero) {
  PointAnnotation a{"t", 21, 21, {{10, 10}}};
  EXPECT_EQ(render_attention(render_density(a), kAttentionKernel, 10.0).values.sum(), 0.0);
  EXPECT_THROW(render_attention(render_density(a), kAttentionKernel, 0.0), std::invalid_argument);
}

TEST(RenderAttention, MatchesOracleOnRandomMaps) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_annotation(rng, 32, 5, i % 2 == 1);
    const auto d = render_density(a);
    oracle::Grid g(a.height, a.width);
    g.v.assign(d.values.data(), d.values.data() + d.values.size());
    EXPECT_EQ(max_diff(render_attention(d).values, oracle::attention(g, 3, 2.0, 1e-3)), 0.0);
  }
}

TEST(RenderAttention, AddingAHeadNeverClearsAPixel) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 30; ++i) {
    auto a = random_annotation(rng, 40, 6, false);
    const auto before = render_attention(render_density(a)).values;
    a.points.push_back({static_cast<double>(i % a.width), static_cast<double>((3 * i) % a.height)});
    const auto after = render_attention(render_density(a)).values;
    EXPECT_TRUE((after >= before).all());
    EXPECT_TRUE(((after == 0.0) || (after == 1.0)).all());
  }
}

TEST(DownscaleHalf, DensitySumPooling) {
  PointAnnotation a{"d", 40, 30, {{3, 4}, {20, 20}, {39, 29}, {0, 0}, {11, 11}, {30, 2}, {5, 25}}};
  const auto d = render_density(a);
  const auto h = downscale_half(d);
  EXPECT_EQ(h.values.rows(), 15);
  EXPECT_EQ(h.values.cols(), 20);
  EXPECT_NEAR(h.sum(), 7.0, 1e-9);
  EXPECT_NEAR(h.sum(), d.sum(), 1e-9);
}

TEST(DownscaleHalf, AttentionMaxPooling) {
  AttentionTarget ones{Map2D::Ones(6, 8)};
  EXPECT_TRUE((downscale_half(ones).values == 1.0).all());
  AttentionTarget single{Map2D::Zero(6, 8)};
  single.values(3, 5) = 1.0;
  const auto h = downscale_half(single);
  EXPECT_EQ(h.values.sum(), 1.0);
  EXPECT_EQ(h.values(1, 2), 1.0);
  EXPECT_THROW(downscale_half(AttentionTarget{Map2D::Zero(5, 8)}), std::invalid_argument);
  EXPECT_THROW(downscale_half(DensityMap{Map2D::Zero(6, 7)}), std::invalid_argument);
}

TEST(Qnrf, PreservesCountAndRescalesPoints) {
  std::mt19937_64 rng(5);
  PointAnnotation a{"q", 1500, 1000, {}};
  std::uniform_real_distribution<double> ux(0, 1499), uy(0, 999);
  for (int i = 0; i < 500; ++i) a.points.push_back({ux(rng), uy(rng)});
  Image img(1500, 1000, 3);
  const auto q = qnrf_preprocess(a, img);
  EXPECT_EQ(q.kernel.mu, adaptive_kernel(1500).mu);
  EXPECT_EQ(q.image.width, 1024);
  EXPECT_EQ(q.image.height, 768);
  EXPECT_EQ(q.density.values.cols(), 1024);
  EXPECT_EQ(q.density.values.rows(), 768);
  EXPECT_NEAR(q.density.sum(), 500.0, 0.05);
  EXPECT_EQ(q.annotation.count(), 500);
  EXPECT_NEAR(q.annotation.points[0].x, rescale_coordinate(a.points[0].x, 1024.0 / 1500.0), 1e-12);
}

TEST(Qnrf, SquareToNonSquareSingleHead) {
  PointAnnotation a{"s", 600, 600, {{300, 300}}};
  const auto q = qnrf_preprocess(a, Image(600, 600, 3));
  EXPECT_NEAR(q.density.sum(), 1.0, 1e-4);
  // The mass sits where the head went.
  Eigen::Index r, c;
  q.density.values.maxCoeff(&r, &c);
  EXPECT_NEAR(static_cast<double>(c), rescale_coordinate(300, 1024.0 / 600.0), 2.0);
  EXPECT_NEAR(static_cast<double>(r), rescale_coordinate(300, 768.0 / 600.0), 2.0);
}

TEST(Qnrf, NativeSizeIsIdentity) {
  PointAnnotation a{"n", 1024, 768, {{100, 200}, {1000, 700}}};
  Image img(1024, 768, 3);
  img.pixels.setRandom();
  const auto q = qnrf_preprocess(a, img);
  EXPECT_EQ(q.kernel.mu, 15);
  EXPECT_TRUE((q.image.pixels == img.pixels).all());
  const auto d = render_density(a, adaptive_kernel(1024));
  EXPECT_TRUE((q.density.values == d.values).all());
  EXPECT_EQ(q.annotation.points[1].x, 1000.0);
}

TEST(Annotation, ClampPoints) {
  PointAnnotation a{"c", 10, 5, {{-3, 2}, {12, 9}}};
  a.clamp_points();
  EXPECT_EQ(a.points[0].x, 0.0);
  EXPECT_EQ(a.points[1].x, 9.0);
  EXPECT_EQ(a.points[1].y, 4.0);
}
