#pragma once

#include "sfanet/data.hpp"
#include "sfanet/evaluation.hpp"
#include "sfanet/model.hpp"
#include "sfanet/training.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace sfanet {

struct TrainerOptions {
  TrainConfig train;
  AugmentConfig augment;
  GroundTruthConfig groundtruth;
  NormalizeConfig normalize;
  /// Checkpoints and report.csv go here when set.
  std::optional<std::filesystem::path> out_dir;
  /// Called after every batch with the 1-based batch counter.
  std::function<void(std::int64_t, const StepLosses&)> on_step;
};

struct ReportRow {
  int epoch = 0;
  std::int64_t step = 0;  ///< batches consumed at the end of the epoch
  double loss = 0.0;      ///< epoch means
  double loss_density = 0.0;
  double loss_attention = 0.0;
  std::optional<double> val_mae;
  std::optional<double> val_mse;
};

struct TrainReport {
  std::vector<ReportRow> rows;
  std::int64_t steps = 0;     ///< batches consumed, including earlier runs when resuming
  std::int64_t rejected = 0;  ///< batches whose update was rejected in this run
  std::optional<double> best_mae;
  std::int64_t best_step = 0;
};

/// Seed for the augmentation of dataset item `index` in `epoch`.
std::mt19937_64 sample_rng(std::uint64_t seed, std::int64_t epoch, std::size_t index);

/// Visiting order of `n` items in `epoch`.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n);

/// Augment -> forward -> loss -> backward -> Adam, starting from
/// `state.batches` so a restored state resumes the same sample stream.
/// Validation (when `val` is given) runs every `eval_every` epochs; the best
/// MAE is kept as best.sfac, the last state as final.sfac.
template <typename Scalar>
TrainReport train(Model<Scalar>& model, const Dataset& train_set, const Dataset* val, AdamState<Scalar>& state,
                  const TrainerOptions& options);

}  // namespace sfanet
