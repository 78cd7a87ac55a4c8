#pragma once

#include "sfanet/data.hpp"

#include <cstdint>
#include <filesystem>

namespace sfanet {

struct SynthConfig {
  int images = 20;
  int width = 128;
  int height = 128;
  int min_count = 5;
  int max_count = 25;
  double blob_sigma = 2.0;   ///< pixels
  double min_spacing = 5.0;  ///< minimum distance between blob centers, pixels
  int margin = 2;            ///< keep centers this far from the border
  double background = 0.15;
  double amplitude = 0.8;
  double noise = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

/// A dark noisy field with one Gaussian blob per head.
DatasetItem synth_item(const SynthConfig& cfg, int index, Image* image_out = nullptr);

/// Writes <out>/images/*.png, <out>/annotations/*.json and <out>/manifest.json;
/// returns the manifest path.
std::filesystem::path write_synth_dataset(const std::filesystem::path& out, const SynthConfig& cfg);

}  // namespace sfanet
