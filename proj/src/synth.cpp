#include "sfanet/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

namespace sfanet {

void SynthConfig::validate() const {
  if (images < 1) throw std::invalid_argument("synth: images must be at least 1");
  if (width < 1 || height < 1) throw std::invalid_argument("synth: image size must be positive");
  if (min_count < 0 || max_count < min_count) throw std::invalid_argument("synth: bad count range");
  if (!(blob_sigma > 0.0)) throw std::invalid_argument("synth: blob_sigma must be positive");
  if (2 * margin >= width || 2 * margin >= height) throw std::invalid_argument("synth: margin leaves no room");
}

namespace {

std::string item_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "synth_%03d", index);
  return buf;
}

}  // namespace

DatasetItem synth_item(const SynthConfig& cfg, int index, Image* image_out) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(index));
  std::uniform_int_distribution<int> count_dist(cfg.min_count, cfg.max_count);
  std::uniform_real_distribution<double> xs(cfg.margin, cfg.width - 1 - cfg.margin);
  std::uniform_real_distribution<double> ys(cfg.margin, cfg.height - 1 - cfg.margin);
  std::normal_distribution<double> noise(0.0, cfg.noise);

  DatasetItem item;
  item.annotation.image_id = item_id(index);
  item.annotation.width = cfg.width;
  item.annotation.height = cfg.height;
  const int count = count_dist(rng);
  // Rejection sampling for spacing; gives up on spacing after many tries so
  // the requested count is always met.
  for (int tries = 0; static_cast<int>(item.annotation.points.size()) < count; ++tries) {
    const Point p{std::round(xs(rng)), std::round(ys(rng))};
    bool ok = true;
    if (tries < 10000) {
      for (const auto& q : item.annotation.points) {
        if (std::hypot(p.x - q.x, p.y - q.y) < cfg.min_spacing) ok = false;
      }
    }
    if (ok) item.annotation.points.push_back(p);
  }

  if (image_out) {
    Image img(cfg.width, cfg.height, 3);
    Map2D field = Map2D::Constant(cfg.height, cfg.width, cfg.background);
    const double two_var = 2.0 * cfg.blob_sigma * cfg.blob_sigma;
    for (const auto& p : item.annotation.points)
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
          const double d2 = (x - p.x) * (x - p.x) + (y - p.y) * (y - p.y);
          field(y, x) += cfg.amplitude * std::exp(-d2 / two_var);
        }
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        const double v = field(y, x) + noise(rng);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    *image_out = std::move(img);
  }
  return item;
}

std::filesystem::path write_synth_dataset(const std::filesystem::path& out, const SynthConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path root = fs::absolute(out);
  fs::create_directories(root / "images");
  fs::create_directories(root / "annotations");
  nlohmann::json manifest = nlohmann::json::array();
  for (int i = 0; i < cfg.images; ++i) {
    Image img;
    DatasetItem item = synth_item(cfg, i, &img);
    item.image_path = root / "images" / (item.annotation.image_id + ".png");
    const fs::path ann = root / "annotations" / (item.annotation.image_id + ".json");
    write_image(item.image_path, img);
    save_annotation(ann, item);
    manifest.push_back(ann.lexically_relative(root).generic_string());
  }
  const fs::path manifest_path = root / "manifest.json";
  std::ofstream m(manifest_path);
  if (!m) throw std::runtime_error("cannot write " + manifest_path.string());
  m << manifest.dump(2) << '\n';
  return manifest_path;
}

}  // namespace sfanet
