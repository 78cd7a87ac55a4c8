#include "sfanet/groundtruth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sfanet {

void PointAnnotation::clamp_points() {
  const double max_x = std::max(0, width - 1), max_y = std::max(0, height - 1);
  for (auto& p : points) {
    p.x = std::clamp(p.x, 0.0, max_x);
    p.y = std::clamp(p.y, 0.0, max_y);
  }
}

void KernelSpec::validate() const {
  if (mu < 1 || mu % 2 == 0) throw std::invalid_argument("kernel size must be odd and positive, got " + std::to_string(mu));
  if (!(rho > 0.0)) throw std::invalid_argument("kernel standard deviation must be positive");
}

Map2D gaussian_window(const KernelSpec& kernel) {
  kernel.validate();
  const int r = kernel.mu / 2;
  Map2D g(kernel.mu, kernel.mu);
  const double two_var = 2.0 * kernel.rho * kernel.rho;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) g(dy + r, dx + r) = std::exp(-(dx * dx + dy * dy) / two_var);
  return g / g.sum();
}

DensityMap render_density(const PointAnnotation& ann, const KernelSpec& kernel) {
  if (ann.width < 0 || ann.height < 0) throw std::invalid_argument("annotation has negative size");
  const Map2D g = gaussian_window(kernel);
  const int r = kernel.mu / 2;
  DensityMap d{Map2D::Zero(ann.height, ann.width)};
  if (ann.width == 0 || ann.height == 0) return d;
  for (const auto& p : ann.points) {
    const int cx = std::clamp(static_cast<int>(std::lround(p.x)), 0, ann.width - 1);
    const int cy = std::clamp(static_cast<int>(std::lround(p.y)), 0, ann.height - 1);
    const int x0 = std::max(cx - r, 0), x1 = std::min(cx + r, ann.width - 1);
    const int y0 = std::max(cy - r, 0), y1 = std::min(cy + r, ann.height - 1);
    const auto stamp = g.block(y0 - cy + r, x0 - cx + r, y1 - y0 + 1, x1 - x0 + 1);
    d.values.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1) += stamp / stamp.sum();
  }
  return d;
}

KernelSpec adaptive_kernel(int image_width) {
  if (image_width < 1) throw std::invalid_argument("image width must be at least 1");
  const double scaled = 15.0 * image_width / 1024.0;
  const int mu = 1 + static_cast<int>(std::floor(scaled / 2.0)) * 2;
  return KernelSpec{mu, (mu + 4) / 4.0};
}

Map2D smooth_density(const DensityMap& density, const KernelSpec& smooth) {
  const Map2D g = gaussian_window(smooth);
  const int r = smooth.mu / 2;
  const auto rows = density.values.rows(), cols = density.values.cols();
  Map2D z = Map2D::Zero(rows, cols);
  // Scatter form: each nonzero input spreads into its clipped window.
  for (Eigen::Index y = 0; y < rows; ++y)
    for (Eigen::Index x = 0; x < cols; ++x) {
      const double v = density.values(y, x);
      if (v == 0.0) continue;
      const auto y0 = std::max<Eigen::Index>(y - r, 0), y1 = std::min<Eigen::Index>(y + r, rows - 1);
      const auto x0 = std::max<Eigen::Index>(x - r, 0), x1 = std::min<Eigen::Index>(x + r, cols - 1);
      z.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1) += v * g.block(y0 - y + r, x0 - x + r, y1 - y0 + 1, x1 - x0 + 1);
    }
  return z;
}

AttentionTarget render_attention(const DensityMap& density, const KernelSpec& smooth, double th) {
  if (!(th > 0.0)) throw std::invalid_argument("attention threshold must be positive");
  const Map2D z = smooth_density(density, smooth);
  return AttentionTarget{(z >= th).cast<double>()};
}

namespace {

void require_even(const Map2D& m) {
  if (m.rows() % 2 != 0 || m.cols() % 2 != 0) {
    throw std::invalid_argument("downscale_half needs even extents, got " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
  }
}

}  // namespace

DensityMap downscale_half(const DensityMap& density) {
  require_even(density.values);
  const auto rows = density.values.rows() / 2, cols = density.values.cols() / 2;
  DensityMap out{Map2D(rows, cols)};
  for (Eigen::Index y = 0; y < rows; ++y)
    for (Eigen::Index x = 0; x < cols; ++x) out.values(y, x) = density.values.block(2 * y, 2 * x, 2, 2).sum();
  return out;
}

AttentionTarget downscale_half(const AttentionTarget& attention) {
  require_even(attention.values);
  const auto rows = attention.values.rows() / 2, cols = attention.values.cols() / 2;
  AttentionTarget out{Map2D(rows, cols)};
  for (Eigen::Index y = 0; y < rows; ++y)
    for (Eigen::Index x = 0; x < cols; ++x) out.values(y, x) = attention.values.block(2 * y, 2 * x, 2, 2).maxCoeff();
  return out;
}

DensityMap resize_density(const DensityMap& density, Eigen::Index rows, Eigen::Index cols) {
  if (rows == density.values.rows() && cols == density.values.cols()) return density;
  const double before = density.sum();
  DensityMap out{resize_bilinear(density.values, rows, cols)};
  const double after = out.sum();
  if (after > 0.0) out.values *= before / after;
  return out;
}

QnrfSample qnrf_preprocess(const PointAnnotation& ann, const Image& image) {
  QnrfSample s;
  s.kernel = adaptive_kernel(ann.width);
  const DensityMap original = render_density(ann, s.kernel);
  s.image = resize_bilinear(image, kQnrfWidth, kQnrfHeight);
  s.density = resize_density(original, kQnrfHeight, kQnrfWidth);
  s.annotation = ann;
  s.annotation.width = kQnrfWidth;
  s.annotation.height = kQnrfHeight;
  const double fx = static_cast<double>(kQnrfWidth) / ann.width, fy = static_cast<double>(kQnrfHeight) / ann.height;
  for (auto& p : s.annotation.points) {
    p.x = rescale_coordinate(p.x, fx);
    p.y = rescale_coordinate(p.y, fy);
  }
  s.annotation.clamp_points();
  return s;
}

}  // namespace sfanet
