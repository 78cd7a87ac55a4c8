#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <stdexcept>

namespace sfanet {

/// Row-major 2-D real field (height rows, width columns).
using Map2D = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planar (CHW) float image, nominally in [0,1]; 1 or 3 channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  Eigen::ArrayXf pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(Eigen::ArrayXf::Zero(Eigen::Index(w) * h * c)) {}

  float& at(int c, int y, int x) { return pixels[(Eigen::Index(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return pixels[(Eigen::Index(c) * height + y) * width + x]; }
  bool empty() const { return width == 0 || height == 0; }
};

/// PNG (via libpng), binary or ASCII PGM/PPM. 8- and 16-bit samples.
Image read_image(const std::filesystem::path& path);

/// Format from the extension: .png, .pgm (1 channel) or .ppm (3 channels).
/// Values are clamped to [0,1] and quantized with round-half-to-even.
void write_image(const std::filesystem::path& path, const Image& image);

/// 8-bit sample for a [0,1] value: clamp, scale by 255, round half to even.
unsigned char quantize_unit(float value);

Image to_rgb(const Image& image);
Image to_gray(const Image& image);

/// Bilinear resampling with half-pixel centers.
Image resize_bilinear(const Image& image, int width, int height);
Map2D resize_bilinear(const Map2D& map, Eigen::Index rows, Eigen::Index cols);

/// Grows the image to at least (width, height) by repeating the last
/// column / row. Never shrinks.
Image pad_replicate(const Image& image, int width, int height);
Image crop(const Image& image, int x0, int y0, int width, int height);
Image flip_horizontal(const Image& image);

/// Nonzero pixels of a single-channel mask image, as a 0/1 map.
Map2D read_mask(const std::filesystem::path& path);

}  // namespace sfanet
