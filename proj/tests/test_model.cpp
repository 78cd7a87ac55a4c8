#include "sfanet/model.hpp"
#include "sfanet/ops.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace sfanet;
using testutil::randn;
using testutil::to_vec;
using T = Tensor<double>;

namespace {

// Frozen from tests/count_params.py (python3 count_params.py 1).
constexpr Index kFullWidthParameters = 17002050;
constexpr Index kFullWidthNoAmpParameters = 15862593;
constexpr Index kEighthWidthParameters = 267850;

ModelConfig mini(bool amp = true) {
  ModelConfig c;
  c.width_multiplier = 0.125;
  c.amp_enabled = amp;
  return c;
}

}  // namespace

TEST(Model, FullWidthParameterCountMatchesGolden) {
  ModelConfig c;
  EXPECT_EQ(Model<float>(c).parameter_count(), kFullWidthParameters);
  c.amp_enabled = false;
  EXPECT_EQ(Model<float>(c).parameter_count(), kFullWidthNoAmpParameters);
}

TEST(Model, EighthWidthBuildsAndRuns) {
  Model<double> m(mini());
  EXPECT_EQ(m.parameter_count(), kEighthWidthParameters);
  std::mt19937_64 rng(1);
  const auto out = m.forward(randn({1, 3, 64, 64}, rng), Mode::Train);
  EXPECT_EQ(out.density.shape(), (Shape{1, 1, 32, 32}));
  EXPECT_EQ(out.attention.shape(), (Shape{1, 1, 32, 32}));
  Tape<double>::active().clear();
}

TEST(Model, ScaledChannelsRoundToNearestWithFloorOne) {
  ModelConfig c;
  c.width_multiplier = 0.125;
  EXPECT_EQ(c.scaled(64), 8);
  EXPECT_EQ(c.scaled(32), 4);
  c.width_multiplier = 0.01;
  EXPECT_EQ(c.scaled(32), 1);
  c.width_multiplier = 0.3;
  EXPECT_EQ(c.scaled(64), 19);
}

TEST(Model, ConfigValidation) {
  ModelConfig c;
  c.width_multiplier = 0.0;
  EXPECT_THROW(Model<float>{c}, std::invalid_argument);
  c.width_multiplier = 1.5;
  EXPECT_THROW(Model<float>{c}, std::invalid_argument);
}

TEST(Model, ParameterNamesAreUniqueAndAblationHasNoAttentionPath) {
  Model<float> with(mini(true)), without(mini(false));
  std::set<std::string> names;
  bool saw_amp = false;
  for (const auto& p : with.parameters()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    EXPECT_TRUE(p.tensor.requires_grad());
    saw_amp = saw_amp || p.name.rfind(kAttentionPrefix, 0) == 0;
  }
  EXPECT_TRUE(saw_amp);
  for (const auto& p : without.parameters()) EXPECT_EQ(p.name.find(kAttentionPrefix), std::string::npos) << p.name;
}

TEST(Model, InitializationFollowsTheSeed) {
  ModelConfig c = mini();
  Model<float> a(c), b(c);
  c.init_seed = 99;
  Model<float> other(c);
  const auto pa = a.parameters(), pb = b.parameters(), po = other.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE((pa[i].tensor.data() == pb[i].tensor.data()).all());
    differs = differs || !(pa[i].tensor.data() == po[i].tensor.data()).all();
  }
  EXPECT_TRUE(differs);
  for (const auto& p : pa) {
    const bool is_bias = p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0 &&
                         p.name.find(".bn.") == std::string::npos;
    if (is_bias) EXPECT_TRUE((p.tensor.data() == 0.0f).all()) << p.name;
  }
}

TEST(Model, PyramidHalvesAtEachLevel) {
  Model<double> m(mini());
  std::mt19937_64 rng(2);
  const auto f = m.extract_features(randn({1, 3, 32, 48}, rng), Mode::Train);
  EXPECT_EQ(f.c22.shape(), (Shape{1, 16, 16, 24}));
  EXPECT_EQ(f.c33.shape(), (Shape{1, 32, 8, 12}));
  EXPECT_EQ(f.c43.shape(), (Shape{1, 64, 4, 6}));
  EXPECT_EQ(f.c53.shape(), (Shape{1, 64, 2, 3}));
  Tape<double>::active().clear();
}

TEST(Model, RejectsSizesNotMultipleOf16) {
  Model<float> m(mini());
  EXPECT_THROW(m.forward(Tensor<float>::zeros({1, 3, 40, 32}), Mode::Train), std::invalid_argument);
  EXPECT_THROW(m.forward(Tensor<float>::zeros({1, 1, 32, 32}), Mode::Train), std::invalid_argument);
}

TEST(Model, AblationRefinedFeaturesAreDensityFeatures) {
  Model<double> m(mini(false));
  std::mt19937_64 rng(3);
  const auto out = m.forward(randn({1, 3, 32, 32}, rng), Mode::Train);
  EXPECT_FALSE(out.attention_logits.defined());
  EXPECT_EQ(to_vec(out.refined_features), to_vec(out.density_features));
  EXPECT_TRUE((out.attention.data() == 1.0).all());
  Tape<double>::active().clear();
}

TEST(Model, ZeroedAttentionOutputGivesHalf) {
  Model<double> m(mini());
  auto& amp = *m.attention_path();
  amp.out.weight.data().setZero();
  amp.out.bias.data().setZero();
  std::mt19937_64 rng(4);
  const auto x = randn({1, 3, 32, 32}, rng);
  const auto out = m.forward(x, Mode::Train);
  EXPECT_TRUE((out.attention.data() == 0.5).all());
  // Density is the 1x1 output conv applied to half the features.
  const auto& dmp = m.density_path().out;
  const auto expected = conv2d(scale(out.density_features, 0.5), dmp.weight, dmp.bias, 1, 0);
  EXPECT_LT((expected.data() - out.density.data()).abs().maxCoeff(), 1e-12);
  Tape<double>::active().clear();
}

TEST(Model, AttentionStrictlyInsideUnitInterval) {
  Model<float> m(mini());
  std::mt19937_64 rng(5);
  Tensor<float> x = Tensor<float>::zeros({2, 3, 64, 64});
  std::normal_distribution<float> d(0.0f, 2.0f);
  for (Index i = 0; i < x.numel(); ++i) x.data()[i] = d(rng);
  NoGradGuard g;
  const auto out = m.forward(x, Mode::Train);
  EXPECT_TRUE((out.attention.data() > 0.0f).all());
  EXPECT_TRUE((out.attention.data() < 1.0f).all());
}

TEST(Model, EvalRequiresStatisticsAndIsDeterministic) {
  Model<double> m(mini());
  std::mt19937_64 rng(6);
  const auto x = randn({1, 3, 32, 32}, rng);
  NoGradGuard g;
  EXPECT_THROW(m.forward(x, Mode::Eval), std::logic_error);
  m.forward(x, Mode::Train);
  const auto a = m.forward(x, Mode::Eval), b = m.forward(x, Mode::Eval);
  EXPECT_EQ(to_vec(a.density), to_vec(b.density));
  EXPECT_EQ(to_vec(a.attention), to_vec(b.attention));
}

TEST(Model, CloneIsIndependent) {
  Model<float> m(mini());
  Model<float> c = m.clone();
  m.parameters()[0].tensor.data()[0] += 1.0f;
  EXPECT_NE(m.parameters()[0].tensor.data()[0], c.parameters()[0].tensor.data()[0]);
}
