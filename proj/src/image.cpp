#include "sfanet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace sfanet {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw ImageIoError("cannot read PNG " + path.string() + ": " + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw ImageIoError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  const int channels = color ? 3 : 1;
  Image img(static_cast<int>(png.width), static_cast<int>(png.height), channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = buffer[(static_cast<std::size_t>(y) * img.width + x) * channels + c] / 255.0f;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        buffer[(static_cast<std::size_t>(y) * image.width + x) * image.channels + c] = quantize_unit(image.at(c, y, x));
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw ImageIoError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

class PnmParser {
 public:
  PnmParser(std::vector<unsigned char> bytes, const std::filesystem::path& path)
      : bytes_(std::move(bytes)), path_(path) {}

  Image parse() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') fail("not a PNM file");
    const char kind = static_cast<char>(bytes_[1]);
    pos_ = 2;
    if (kind != '2' && kind != '3' && kind != '5' && kind != '6') fail(std::string("unsupported PNM type P") + kind);
    const int channels = (kind == '3' || kind == '6') ? 3 : 1;
    const bool ascii = kind == '2' || kind == '3';
    const int width = static_cast<int>(number());
    const int height = static_cast<int>(number());
    const long maxval = number();
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) fail("bad PNM header");
    ++pos_;  // single whitespace before raster

    Image img(width, height, channels);
    const bool wide = maxval > 255;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < channels; ++c) {
          long v = 0;
          if (ascii) {
            v = number();
          } else if (wide) {
            v = (static_cast<long>(byte()) << 8) | byte();
          } else {
            v = byte();
          }
          img.at(c, y, x) = static_cast<float>(static_cast<double>(v) / static_cast<double>(maxval));
        }
    return img;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ImageIoError(path_.string() + ": " + what); }

  unsigned char byte() {
    if (pos_ >= bytes_.size()) fail("truncated raster");
    return bytes_[pos_++];
  }

  long number() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("expected a number");
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) v = v * 10 + (bytes_[pos_++] - '0');
    return v;
  }

  std::vector<unsigned char> bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

void write_pnm(const std::filesystem::path& path, const Image& image, int channels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot open " + path.string() + " for writing");
  out << (channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  std::vector<char> raster;
  raster.reserve(static_cast<std::size_t>(image.width) * image.height * channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < channels; ++c) raster.push_back(static_cast<char>(quantize_unit(image.at(c, y, x))));
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw ImageIoError("failed writing " + path.string());
}

// Source coordinate and weights for one output index under half-pixel mapping.
struct Tap {
  Eigen::Index i0, i1;
  double w1;
};

Tap bilinear_tap(Eigen::Index dst, Eigen::Index dst_size, Eigen::Index src_size) {
  const double scale = static_cast<double>(src_size) / static_cast<double>(dst_size);
  double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(src_size - 1));
  const auto i0 = static_cast<Eigen::Index>(std::floor(s));
  const auto i1 = std::min(i0 + 1, src_size - 1);
  return {i0, i1, s - static_cast<double>(i0)};
}

}  // namespace

unsigned char quantize_unit(float value) {
  const double v = std::clamp(static_cast<double>(value), 0.0, 1.0) * 255.0;
  return static_cast<unsigned char>(std::nearbyint(v));
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open image " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  static constexpr unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngSignature, kPngSignature + 8, bytes.begin())) return read_png(path);
  return PnmParser(std::move(bytes), path).parse();
}

void write_image(const std::filesystem::path& path, const Image& image) {
  if (image.empty()) throw ImageIoError("refusing to write empty image to " + path.string());
  const auto ext = lower_extension(path);
  if (ext == ".png") {
    write_png(path, image.channels == 3 || image.channels == 1 ? image : to_rgb(image));
  } else if (ext == ".pgm") {
    write_pnm(path, image.channels == 1 ? image : to_gray(image), 1);
  } else if (ext == ".ppm") {
    write_pnm(path, image.channels == 3 ? image : to_rgb(image), 3);
  } else {
    throw ImageIoError("unknown image extension for " + path.string());
  }
}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  Image out(image.width, image.height, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(0, y, x);
  return out;
}

Image to_gray(const Image& image) {
  if (image.channels == 1) return image;
  Image out(image.width, image.height, 1);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      out.at(0, y, x) = 0.299f * image.at(0, y, x) + 0.587f * image.at(1, y, x) + 0.114f * image.at(2, y, x);
  return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
  if (width == image.width && height == image.height) return image;
  if (width <= 0 || height <= 0) throw std::invalid_argument("resize_bilinear: target size must be positive");
  Image out(width, height, image.channels);
  for (int y = 0; y < height; ++y) {
    const Tap ty = bilinear_tap(y, height, image.height);
    for (int x = 0; x < width; ++x) {
      const Tap tx = bilinear_tap(x, width, image.width);
      for (int c = 0; c < image.channels; ++c) {
        const double top = (1 - tx.w1) * image.at(c, int(ty.i0), int(tx.i0)) + tx.w1 * image.at(c, int(ty.i0), int(tx.i1));
        const double bot = (1 - tx.w1) * image.at(c, int(ty.i1), int(tx.i0)) + tx.w1 * image.at(c, int(ty.i1), int(tx.i1));
        out.at(c, y, x) = static_cast<float>((1 - ty.w1) * top + ty.w1 * bot);
      }
    }
  }
  return out;
}

Map2D resize_bilinear(const Map2D& map, Eigen::Index rows, Eigen::Index cols) {
  if (rows == map.rows() && cols == map.cols()) return map;
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("resize_bilinear: target size must be positive");
  Map2D out(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    const Tap ty = bilinear_tap(y, rows, map.rows());
    for (Eigen::Index x = 0; x < cols; ++x) {
      const Tap tx = bilinear_tap(x, cols, map.cols());
      const double top = (1 - tx.w1) * map(ty.i0, tx.i0) + tx.w1 * map(ty.i0, tx.i1);
      const double bot = (1 - tx.w1) * map(ty.i1, tx.i0) + tx.w1 * map(ty.i1, tx.i1);
      out(y, x) = (1 - ty.w1) * top + ty.w1 * bot;
    }
  }
  return out;
}

Image pad_replicate(const Image& image, int width, int height) {
  const int w = std::max(width, image.width), h = std::max(height, image.height);
  if (w == image.width && h == image.height) return image;
  Image out(w, h, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = image.at(c, std::min(y, image.height - 1), std::min(x, image.width - 1));
  return out;
}

Image crop(const Image& image, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || x0 + width > image.width || y0 + height > image.height || width <= 0 || height <= 0) {
    throw std::invalid_argument("crop window outside image");
  }
  Image out(width, height, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, y0 + y, x0 + x);
  return out;
}

Image flip_horizontal(const Image& image) {
  Image out(image.width, image.height, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Map2D read_mask(const std::filesystem::path& path) {
  const Image img = read_image(path);
  Map2D mask(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      bool inside = false;
      for (int c = 0; c < img.channels; ++c) inside = inside || img.at(c, y, x) != 0.0f;
      mask(y, x) = inside ? 1.0 : 0.0;
    }
  return mask;
}

}  // namespace sfanet
