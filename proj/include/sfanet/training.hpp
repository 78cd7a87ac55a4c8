#pragma once

#include "sfanet/model.hpp"
#include "sfanet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sfanet {

/// How the per-pixel terms of both losses are reduced within one image.
enum class PixelReduction {
  Sum,   ///< squared L2 norm / summed BCE per image, averaged over the batch
  Mean,  ///< per-pixel mean, averaged over the batch
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-3;
  double alpha = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 30;
  int epochs = 1;
  std::int64_t max_steps = 0;         ///< 0 = no cap
  std::int64_t checkpoint_every = 0;  ///< steps; 0 = only best/final
  int eval_every = 1;                 ///< epochs between validation passes; 0 = never
  std::uint64_t seed = 0;
  bool amp_enabled = true;
  PixelReduction reduction = PixelReduction::Sum;

  void validate() const;
};

template <typename Scalar>
struct AdamState {
  std::int64_t step = 0;     ///< applied updates
  std::int64_t batches = 0;  ///< batches consumed by the trainer, rejected steps included
  std::map<std::string, Buffer<Scalar>> exp_avg;
  std::map<std::string, Buffer<Scalar>> exp_avg_sq;
};

/// Mean over the batch of the per-image sum of squared errors.
template <typename Scalar>
Tensor<Scalar> density_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                            PixelReduction reduction = PixelReduction::Sum);

/// Binary cross-entropy of sigmoid(logits) against a {0,1} target, summed
/// per image and averaged over the batch. Throws if the target is not binary.
template <typename Scalar>
Tensor<Scalar> attention_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target,
                              PixelReduction reduction = PixelReduction::Sum);

/// density + alpha * attention; just the density term when there is no
/// attention term.
template <typename Scalar>
Tensor<Scalar> combined_loss(const Tensor<Scalar>& density_term, const std::optional<Tensor<Scalar>>& attention_term,
                             Scalar alpha);

/// One bias-corrected Adam update with coupled L2 weight decay. Parameters
/// without a gradient are skipped. Returns false (and leaves parameters,
/// moments and the step counter alone) if any gradient is non-finite.
template <typename Scalar>
bool adam_step(std::span<Parameter<Scalar>> params, AdamState<Scalar>& state, const TrainConfig& cfg);

struct StepLosses {
  double total = 0.0;
  double density = 0.0;
  double attention = 0.0;
  bool applied = true;
};

/// images [N,3,h,w], targets [N,1,h/2,w/2]
template <typename Scalar>
struct Batch {
  Tensor<Scalar> images;
  Tensor<Scalar> density;
  Tensor<Scalar> attention;
};

/// forward -> loss -> backward -> adam_step on one batch.
template <typename Scalar>
StepLosses train_step(Model<Scalar>& model, const Batch<Scalar>& batch, AdamState<Scalar>& state,
                      const TrainConfig& cfg);

/// Train-mode loss on a batch; parameters and running statistics are left as they were.
template <typename Scalar>
StepLosses evaluate_loss(Model<Scalar>& model, const Batch<Scalar>& batch, const TrainConfig& cfg);

}  // namespace sfanet
