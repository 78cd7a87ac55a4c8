#pragma once

#include "sfanet/image.hpp"

#include <string>
#include <vector>

namespace sfanet {

struct Point {
  double x = 0.0;  ///< column, pixels
  double y = 0.0;  ///< row, pixels
};

struct PointAnnotation {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<Point> points;

  /// Moves every point into [0, width-1] x [0, height-1].
  void clamp_points();
  Eigen::Index count() const { return static_cast<Eigen::Index>(points.size()); }
};

/// Gaussian window: `mu` is the full (odd) window size, `rho` the standard
/// deviation, both in pixels.
struct KernelSpec {
  int mu = 15;
  double rho = 4.0;

  void validate() const;
};

inline constexpr KernelSpec kDensityKernel{15, 4.0};
inline constexpr KernelSpec kAttentionKernel{3, 2.0};
inline constexpr double kAttentionThreshold = 1e-3;

struct DensityMap {
  Map2D values;  ///< people per pixel
  double sum() const { return values.sum(); }
};

struct AttentionTarget {
  Map2D values;  ///< exactly 0 or 1
};

/// Truncated mu x mu Gaussian normalized to unit sum.
Map2D gaussian_window(const KernelSpec& kernel);

/// One unit-mass stamp per head, centered on the rounded pixel and
/// renormalized after clipping at the image border.
DensityMap render_density(const PointAnnotation& ann, const KernelSpec& kernel = kDensityKernel);

/// mu = 1 + floor(15 * w / 1024 / 2) * 2, rho = (mu + 4) / 4.
KernelSpec adaptive_kernel(int image_width);

/// Zero-padded same-size convolution of the density with the unit-sum
/// window, then 1 where the result is >= th.
AttentionTarget render_attention(const DensityMap& density, const KernelSpec& smooth = kAttentionKernel,
                                 double th = kAttentionThreshold);

/// The smoothed field the attention threshold is applied to.
Map2D smooth_density(const DensityMap& density, const KernelSpec& smooth);

/// 2x2 sum pooling (count preserving). Odd extents are rejected.
DensityMap downscale_half(const DensityMap& density);
/// 2x2 max pooling (mask preserving). Odd extents are rejected.
AttentionTarget downscale_half(const AttentionTarget& attention);

struct QnrfSample {
  Image image;
  PointAnnotation annotation;
  KernelSpec kernel;
  DensityMap density;
};

inline constexpr int kQnrfWidth = 1024;
inline constexpr int kQnrfHeight = 768;

/// Kernel from the original width, density rendered at the original size,
/// then image and density resized to 1024x768 with the density rescaled so
/// its sum is unchanged. Point coordinates are scaled along.
QnrfSample qnrf_preprocess(const PointAnnotation& ann, const Image& image);

/// Resamples a density map bilinearly and rescales it to keep the total.
DensityMap resize_density(const DensityMap& density, Eigen::Index rows, Eigen::Index cols);

/// Point coordinate under the half-pixel mapping used by resize_bilinear.
inline double rescale_coordinate(double v, double factor) { return (v + 0.5) * factor - 0.5; }

}  // namespace sfanet
