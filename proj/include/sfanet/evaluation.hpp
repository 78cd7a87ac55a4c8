#pragma once

#include "sfanet/data.hpp"
#include "sfanet/model.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sfanet {

struct ImageResult {
  std::string image_id;
  double predicted_count = 0.0;
  long gt_count = 0;
  double abs_err = 0.0;
  double sq_err = 0.0;
};

struct EvalResult {
  std::vector<ImageResult> per_image;  ///< sorted by image_id
  double mae = 0.0;
  double mse = 0.0;  ///< root of the mean squared error
  std::size_t n = 0;
};

/// Sum over the first valid_rows x valid_cols cells of a [1,1,h,w] map,
/// weighted by the ROI when given. Negative cells count as they are.
template <typename Scalar>
double count_from_density(const Tensor<Scalar>& density, const Map2D* roi = nullptr, Index valid_rows = -1,
                          Index valid_cols = -1);

/// MAE = mean |C - C_gt|, MSE = sqrt(mean |C - C_gt|^2), accumulated in
/// image_id order.
EvalResult aggregate(std::vector<ImageResult> results);

/// Convenience for bare count vectors; ids are zero-padded indices.
EvalResult aggregate_counts(std::span<const double> predicted, std::span<const long> ground_truth);

struct EvalOptions {
  NormalizeConfig normalize;
  std::optional<Map2D> roi;  ///< overrides per-item ROI masks when set
};

/// Eval-mode forward per image; throws on an empty dataset.
template <typename Scalar>
EvalResult evaluate(Model<Scalar>& model, const Dataset& dataset, const EvalOptions& options = {});

/// Fraction of valid output cells where (attention > 0.5) agrees with the
/// half-resolution attention target rendered from the annotation.
template <typename Scalar>
double attention_accuracy(Model<Scalar>& model, const Dataset& dataset, const GroundTruthConfig& gt = {},
                          const NormalizeConfig& norm = {});

/// {"n":..,"mae":..,"mse":..,"per_image":[...]} with keys in that order.
std::string eval_result_json(const EvalResult& result);
void write_eval_json(const std::filesystem::path& path, const EvalResult& result);
void write_eval_csv(const std::filesystem::path& path, const EvalResult& result);

// Density sidecar: "SFDM" | u32 width | u32 height | u32 reserved | f32 row-major values.
void write_density_sidecar(const std::filesystem::path& path, const Map2D& density);
Map2D read_density_sidecar(const std::filesystem::path& path);

struct ExportedMaps {
  std::filesystem::path density_image;
  std::filesystem::path density_raw;
  std::filesystem::path attention_image;
  std::filesystem::path panel_image;
};

/// Writes <prefix>_density.<ext> (scaled by the map maximum),
/// <prefix>_density.sfdm (raw values), <prefix>_attention.<ext> (0..255)
/// and <prefix>_panel.<ext> (input | density | attention). `extension` is
/// ".png" or ".pgm"; the panel is written as .ppm in the latter case.
template <typename Scalar>
ExportedMaps export_maps(const ModelOutput<Scalar>& output, const Image& input, const std::filesystem::path& prefix,
                         const std::string& extension = ".png", Index valid_rows = -1, Index valid_cols = -1);

/// Output-resolution map from a [1,1,h,w] tensor, cropped to rows x cols.
template <typename Scalar>
Map2D tensor_to_map(const Tensor<Scalar>& t, Index rows = -1, Index cols = -1);

}  // namespace sfanet
