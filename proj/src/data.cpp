#include "sfanet/data.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace sfanet {

namespace {

using nlohmann::json;

Image resize_with_points(const Image& image, int width, int height, std::vector<Point>& points) {
  const double fx = static_cast<double>(width) / image.width, fy = static_cast<double>(height) / image.height;
  for (auto& p : points) {
    p.x = rescale_coordinate(p.x, fx);
    p.y = rescale_coordinate(p.y, fy);
  }
  return resize_bilinear(image, width, height);
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

Map2D resize_mask_nearest(const Map2D& mask, Eigen::Index rows, Eigen::Index cols) {
  Map2D out(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    const auto sy = std::min<Eigen::Index>(static_cast<Eigen::Index>((y + 0.5) * mask.rows() / rows), mask.rows() - 1);
    for (Eigen::Index x = 0; x < cols; ++x) {
      const auto sx = std::min<Eigen::Index>(static_cast<Eigen::Index>((x + 0.5) * mask.cols() / cols), mask.cols() - 1);
      out(y, x) = mask(sy, sx) != 0.0 ? 1.0 : 0.0;
    }
  }
  return out;
}

}  // namespace

void AugmentConfig::validate() const {
  if (crop_width <= 0 || crop_height <= 0 || crop_width % 2 != 0 || crop_height % 2 != 0) {
    throw std::invalid_argument("crop size must be positive and even");
  }
  for (double p : {flip_p, gamma_p, gray_p}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("augmentation probabilities must lie in [0,1]");
  }
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw std::invalid_argument("bad scale range");
  if (!(gamma_min > 0.0 && gamma_min <= gamma_max)) throw std::invalid_argument("bad gamma range");
  if (short_side_min < 0) throw std::invalid_argument("short_side_min must be non-negative");
}

Image normalize(const Image& image, const NormalizeConfig& norm) {
  Image out = to_rgb(image);
  const Eigen::Index plane = Eigen::Index(out.width) * out.height;
  for (int c = 0; c < 3; ++c) {
    out.pixels.segment(c * plane, plane) = (out.pixels.segment(c * plane, plane) - norm.mean[c]) / norm.stddev[c];
  }
  return out;
}

std::vector<Point> crop_points(std::span<const Point> points, int x0, int y0, int width, int height) {
  std::vector<Point> kept;
  for (const auto& p : points) {
    const double x = p.x - x0, y = p.y - y0;
    const long px = std::lround(x), py = std::lround(y);
    if (px >= 0 && px < width && py >= 0 && py < height) kept.push_back({x, y});
  }
  return kept;
}

Sample augment(const Image& input, std::span<const Point> input_points, const AugmentConfig& cfg, std::mt19937_64& rng,
               const GroundTruthConfig& gt, const NormalizeConfig& norm, AugmentTrace* trace) {
  if (input.empty()) throw std::invalid_argument("augment: empty image");
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Every random quantity is drawn up front so the stream does not depend
  // on which transforms fire.
  const double scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * unit(rng);
  const double crop_u = unit(rng), crop_v = unit(rng);
  const double flip_u = unit(rng);
  const double gamma_u = unit(rng);
  const double gamma = cfg.gamma_min + (cfg.gamma_max - cfg.gamma_min) * unit(rng);
  const double gray_u = unit(rng);

  AugmentTrace t;
  Image img = to_rgb(input);
  std::vector<Point> points(input_points.begin(), input_points.end());

  const int short_side = std::min(img.width, img.height);
  if (short_side < cfg.short_side_min) {
    const double f = static_cast<double>(cfg.short_side_min) / short_side;
    const int w = img.width == short_side ? cfg.short_side_min : static_cast<int>(std::lround(img.width * f));
    const int h = img.height == short_side ? cfg.short_side_min : static_cast<int>(std::lround(img.height * f));
    img = resize_with_points(img, w, h, points);
  }

  t.scale = scale;
  if (scale != 1.0) {
    const int w = std::max(1, static_cast<int>(std::lround(img.width * scale)));
    const int h = std::max(1, static_cast<int>(std::lround(img.height * scale)));
    img = resize_with_points(img, w, h, points);
  }

  if (img.width < cfg.crop_width || img.height < cfg.crop_height) {
    spdlog::debug("augment: {}x{} image padded to crop {}x{}", img.width, img.height, cfg.crop_width, cfg.crop_height);
    img = pad_replicate(img, cfg.crop_width, cfg.crop_height);
    t.padded = true;
  }
  const int span_x = img.width - cfg.crop_width, span_y = img.height - cfg.crop_height;
  t.crop_x = std::min(span_x, static_cast<int>(crop_u * (span_x + 1)));
  t.crop_y = std::min(span_y, static_cast<int>(crop_v * (span_y + 1)));
  img = crop(img, t.crop_x, t.crop_y, cfg.crop_width, cfg.crop_height);
  points = crop_points(points, t.crop_x, t.crop_y, cfg.crop_width, cfg.crop_height);

  if (flip_u < cfg.flip_p) {
    img = flip_horizontal(img);
    for (auto& p : points) p.x = cfg.crop_width - 1 - p.x;
    t.flipped = true;
  }
  if (gamma_u < cfg.gamma_p) {
    img.pixels = img.pixels.max(0.0f).pow(static_cast<float>(gamma));
    t.gamma_applied = true;
    t.gamma = gamma;
  }
  if (gray_u < cfg.gray_p) {
    img = to_rgb(to_gray(img));
    t.grayscale = true;
  }

  Sample s;
  s.image = normalize(img, norm);
  s.points = points;
  PointAnnotation ann{"", cfg.crop_width, cfg.crop_height, points};
  const DensityMap density = render_density(ann, gt.density_kernel);
  s.attention_target = downscale_half(render_attention(density, gt.attention_kernel, gt.threshold));
  s.density_target = downscale_half(density);
  if (trace) *trace = t;
  return s;
}

template <typename Scalar>
Batch<Scalar> make_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  const int w = samples[0].image.width, h = samples[0].image.height;
  const auto n = static_cast<Index>(samples.size());
  const Index hh = h / 2, hw = w / 2;
  Batch<Scalar> b;
  b.images = Tensor<Scalar>::zeros({n, 3, h, w});
  b.density = Tensor<Scalar>::zeros({n, 1, hh, hw});
  b.attention = Tensor<Scalar>::zeros({n, 1, hh, hw});
  const Index image_size = 3 * Index(w) * h, target_size = hh * hw;
  for (Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (s.image.width != w || s.image.height != h || s.image.channels != 3 ||
        s.density_target.values.rows() != hh || s.density_target.values.cols() != hw ||
        s.attention_target.values.rows() != hh || s.attention_target.values.cols() != hw) {
      throw std::invalid_argument("make_batch: sample " + std::to_string(i) + " does not match the first sample's size");
    }
    b.images.data().segment(i * image_size, image_size) = s.image.pixels.template cast<Scalar>();
    b.density.data().segment(i * target_size, target_size) =
        Eigen::Map<const Eigen::ArrayXd>(s.density_target.values.data(), target_size).template cast<Scalar>();
    b.attention.data().segment(i * target_size, target_size) =
        Eigen::Map<const Eigen::ArrayXd>(s.attention_target.values.data(), target_size).template cast<Scalar>();
  }
  return b;
}

Map2D roi_to_output_grid(const Map2D& roi, Eigen::Index rows, Eigen::Index cols) {
  return resize_mask_nearest(roi, rows, cols);
}

template <typename Scalar>
EvalInput<Scalar> eval_prepare(const Image& image, const std::optional<Map2D>& roi, const NormalizeConfig& norm) {
  if (image.empty()) throw std::invalid_argument("eval_prepare: empty image");
  EvalInput<Scalar> in;
  in.height = image.height;
  in.width = image.width;
  const int padded_h = (image.height + 15) / 16 * 16, padded_w = (image.width + 15) / 16 * 16;
  in.pad_bottom = padded_h - image.height;
  in.pad_right = padded_w - image.width;
  in.valid_rows = (image.height + 1) / 2;
  in.valid_cols = (image.width + 1) / 2;
  const Image padded = pad_replicate(normalize(image, norm), padded_w, padded_h);
  in.image = Tensor<Scalar>::from_data({1, 3, padded_h, padded_w}, padded.pixels.template cast<Scalar>());
  if (roi) in.roi = roi_to_output_grid(*roi, in.valid_rows, in.valid_cols);
  return in;
}

DatasetItem load_annotation(const std::filesystem::path& path) {
  const json j = read_json(path);
  DatasetItem item;
  try {
    const auto base = path.parent_path();
    item.image_path = base / j.at("image").get<std::string>();
    item.annotation.width = j.at("width").get<int>();
    item.annotation.height = j.at("height").get<int>();
    item.annotation.image_id = j.contains("id") ? j.at("id").get<std::string>() : path.stem().string();
    for (const auto& p : j.at("points")) {
      item.annotation.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
    if (j.contains("roi")) item.roi_path = base / j.at("roi").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error("bad annotation " + path.string() + ": " + e.what());
  }
  if (item.annotation.width <= 0 || item.annotation.height <= 0) {
    throw std::runtime_error("bad annotation " + path.string() + ": non-positive image size");
  }
  item.annotation.clamp_points();
  return item;
}

void save_annotation(const std::filesystem::path& path, const DatasetItem& item) {
  json j;
  j["id"] = item.annotation.image_id;
  j["image"] = item.image_path.lexically_relative(path.parent_path()).generic_string();
  j["width"] = item.annotation.width;
  j["height"] = item.annotation.height;
  json pts = json::array();
  for (const auto& p : item.annotation.points) pts.push_back({p.x, p.y});
  j["points"] = pts;
  if (item.roi_path) j["roi"] = item.roi_path->lexically_relative(path.parent_path()).generic_string();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<DatasetItem> load_manifest(const std::filesystem::path& path) {
  const json j = read_json(path);
  if (!j.is_array()) throw std::runtime_error("manifest " + path.string() + " must be a JSON list");
  std::vector<DatasetItem> items;
  for (const auto& entry : j) items.push_back(load_annotation(path.parent_path() / entry.get<std::string>()));
  return items;
}

LoadedItem ingest(const DatasetItem& item, const IngestConfig& cfg) {
  LoadedItem out;
  out.annotation = item.annotation;
  out.image = to_rgb(read_image(item.image_path));
  if (out.image.width != item.annotation.width || out.image.height != item.annotation.height) {
    throw std::runtime_error("image " + item.image_path.string() + " is " + std::to_string(out.image.width) + "x" +
                             std::to_string(out.image.height) + " but its annotation says " +
                             std::to_string(item.annotation.width) + "x" + std::to_string(item.annotation.height));
  }
  if (item.roi_path) out.roi = read_mask(*item.roi_path);

  auto resize_to = [&](int w, int h) {
    out.image = resize_with_points(out.image, w, h, out.annotation.points);
    out.annotation.width = w;
    out.annotation.height = h;
    out.annotation.clamp_points();
    if (out.roi) out.roi = resize_mask_nearest(*out.roi, h, w);
  };
  if (cfg.qnrf_resize) resize_to(kQnrfWidth, kQnrfHeight);
  if (cfg.ucsd_upscale) resize_to(960, 640);
  return out;
}

Dataset::Dataset(std::vector<DatasetItem> items, const IngestConfig& cfg) {
  for (const auto& item : items) items_.push_back(ingest(item, cfg));
}

Dataset Dataset::from_manifest(const std::filesystem::path& manifest, const IngestConfig& cfg) {
  return Dataset(load_manifest(manifest), cfg);
}

template Batch<float> make_batch(std::span<const Sample>);
template Batch<double> make_batch(std::span<const Sample>);
template EvalInput<float> eval_prepare(const Image&, const std::optional<Map2D>&, const NormalizeConfig&);
template EvalInput<double> eval_prepare(const Image&, const std::optional<Map2D>&, const NormalizeConfig&);

}  // namespace sfanet
