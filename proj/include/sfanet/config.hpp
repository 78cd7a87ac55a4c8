#pragma once

#include "sfanet/data.hpp"
#include "sfanet/model.hpp"
#include "sfanet/training.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfanet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a `train`, `eval` or `gen-gt` run needs.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  GroundTruthConfig groundtruth;
  NormalizeConfig normalize;
  IngestConfig ingest;
  std::optional<std::filesystem::path> train_manifest;
  std::optional<std::filesystem::path> val_manifest;
  std::optional<std::filesystem::path> roi;
  std::optional<std::filesystem::path> out_dir;

  /// Sets the same seed on the model, trainer and augmentation.
  void set_seed(std::uint64_t seed);
  void validate() const;
};

std::vector<std::string> preset_names();

/// desk, parta, partb, qnrf or ucsd; throws ConfigError otherwise.
RunConfig preset(const std::string& name);

/// INI file with [model], [train], [augment], [groundtruth], [normalize] and
/// [data] sections whose keys are the field names of the matching structs.
/// Values override `base`; relative paths resolve against the file's directory.
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Same as load_config for an in-memory document; paths resolve against `dir`.
RunConfig parse_config(const std::string& text, const std::filesystem::path& dir, RunConfig base = {});

}  // namespace sfanet
