#pragma once

#include "sfanet/groundtruth.hpp"
#include "sfanet/image.hpp"
#include "sfanet/tensor.hpp"
#include "sfanet/training.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sfanet {

struct AugmentConfig {
  int crop_width = 400;
  int crop_height = 400;
  int short_side_min = 512;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double flip_p = 0.5;
  double gamma_min = 0.5;
  double gamma_max = 1.5;
  double gamma_p = 0.3;
  double gray_p = 0.0;  ///< 0.1 in the ShanghaiTech Part A preset
  std::uint64_t seed = 0;

  void validate() const;
};

struct NormalizeConfig {
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};
};

struct GroundTruthConfig {
  KernelSpec density_kernel = kDensityKernel;
  KernelSpec attention_kernel = kAttentionKernel;
  double threshold = kAttentionThreshold;
};

/// Dataset-level preprocessing applied when an image is loaded.
struct IngestConfig {
  bool qnrf_resize = false;  ///< resize to 1024x768 before anything else
  bool ucsd_upscale = false; ///< bilinear enlargement to 960x640
};

struct Sample {
  Image image;                 ///< 3 channels, normalized
  std::vector<Point> points;   ///< in crop coordinates
  DensityMap density_target;   ///< half resolution
  AttentionTarget attention_target;  ///< half resolution
  std::optional<Map2D> roi;
};

/// Which random transforms fired; handy for frequency checks and logs.
struct AugmentTrace {
  double scale = 1.0;
  int crop_x = 0;
  int crop_y = 0;
  bool padded = false;
  bool flipped = false;
  bool gamma_applied = false;
  double gamma = 1.0;
  bool grayscale = false;
};

/// Short-side upscale, random scale, random crop, flip, gamma and grayscale
/// in that order, then targets rendered from the surviving points and
/// sum-pooled to half resolution. `image` holds [0,1] values.
Sample augment(const Image& image, std::span<const Point> points, const AugmentConfig& cfg, std::mt19937_64& rng,
               const GroundTruthConfig& gt = {}, const NormalizeConfig& norm = {}, AugmentTrace* trace = nullptr);

/// Per-channel (x - mean) / std on a [0,1] image, replicated to RGB first.
Image normalize(const Image& image, const NormalizeConfig& norm);

/// Stacks samples of one crop size. Throws on an empty or mixed-size list.
template <typename Scalar>
Batch<Scalar> make_batch(std::span<const Sample> samples);

template <typename Scalar>
struct EvalInput {
  Tensor<Scalar> image;  ///< [1,3,H',W'], H' and W' multiples of 16
  int height = 0;        ///< original size
  int width = 0;
  int pad_bottom = 0;
  int pad_right = 0;
  Eigen::Index valid_rows = 0;  ///< output cells that overlap the original image
  Eigen::Index valid_cols = 0;
  std::optional<Map2D> roi;     ///< valid_rows x valid_cols, 0/1
};

/// Replicate-pads to multiples of 16 and samples the ROI mask (if any) onto
/// the output grid.
template <typename Scalar>
EvalInput<Scalar> eval_prepare(const Image& image, const std::optional<Map2D>& roi, const NormalizeConfig& norm = {});

/// Nearest-neighbour sampling of a pixel mask onto the half-resolution grid.
Map2D roi_to_output_grid(const Map2D& roi, Eigen::Index rows, Eigen::Index cols);

/// Points inside a [0,w)x[0,h) window after shifting by (-x0,-y0).
std::vector<Point> crop_points(std::span<const Point> points, int x0, int y0, int width, int height);

struct DatasetItem {
  PointAnnotation annotation;
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> roi_path;
};

/// {"image": path, "width": int, "height": int, "points": [[x,y], ...]};
/// relative image paths resolve against the annotation's directory.
DatasetItem load_annotation(const std::filesystem::path& path);
void save_annotation(const std::filesystem::path& path, const DatasetItem& item);

/// JSON list of annotation paths, relative to the manifest's directory.
std::vector<DatasetItem> load_manifest(const std::filesystem::path& path);

struct LoadedItem {
  PointAnnotation annotation;  ///< after ingestion resizing
  Image image;                 ///< [0,1], RGB
  std::optional<Map2D> roi;
};

/// Images are loaded eagerly; the synthetic and desk-scale sets are small.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<DatasetItem> items, const IngestConfig& ingest = {});
  static Dataset from_manifest(const std::filesystem::path& manifest, const IngestConfig& ingest = {});

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const LoadedItem& operator[](std::size_t i) const { return items_.at(i); }
  void add(LoadedItem item) { items_.push_back(std::move(item)); }

 private:
  std::vector<LoadedItem> items_;
};

LoadedItem ingest(const DatasetItem& item, const IngestConfig& ingest);

}  // namespace sfanet
