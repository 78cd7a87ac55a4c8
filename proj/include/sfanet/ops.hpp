#pragma once

#include "sfanet/tensor.hpp"

#include <cstdint>

namespace sfanet {

enum class Mode { Train, Eval };

enum class ConvAlgorithm {
  Direct,  ///< nested-loop reference
  Gemm,    ///< im2col + Eigen matrix product
};

enum class UpsampleMode { Nearest };

/// Same-padded stride-1 convolution, NCHW. Kernels are 1x1 or 3x3 and
/// `pad` must equal k/2.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      int stride, int pad, ConvAlgorithm algorithm = ConvAlgorithm::Gemm);

/// Per-channel running statistics owned by a batch-norm layer.
template <typename Scalar>
struct BatchNormState {
  Buffer<Scalar> running_mean;
  Buffer<Scalar> running_var;
  std::int64_t num_batches_tracked = 0;

  BatchNormState() = default;
  explicit BatchNormState(Index channels)
      : running_mean(Buffer<Scalar>::Zero(channels)), running_var(Buffer<Scalar>::Ones(channels)) {}

  bool initialized() const { return num_batches_tracked > 0; }
};

/// Train mode normalizes with biased batch statistics and folds the
/// unbiased variance into the running estimate; eval mode uses the running
/// estimate and throws std::logic_error if it was never updated.
template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                           BatchNormState<Scalar>& stats, Mode mode, Scalar eps, Scalar momentum);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input);

/// Overflow-free logistic function.
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input);

/// 2x2 window, stride 2. Gradient flows to the first maximum in row-major
/// window order.
template <typename Scalar>
Tensor<Scalar> maxpool2x2(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> upsample2x(const Tensor<Scalar>& input, UpsampleMode mode = UpsampleMode::Nearest);

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Channels [begin, end) of an NCHW tensor.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& input, Index begin, Index end);

/// features[N,C,H,W] * map[N,1,H,W], the map broadcast over channels.
template <typename Scalar>
Tensor<Scalar> mul_broadcast_channel(const Tensor<Scalar>& features, const Tensor<Scalar>& map);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

/// Sum of all elements as a rank-0 tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);

/// sum((pred - target)^2) * factor; target is treated as a constant.
template <typename Scalar>
Tensor<Scalar> squared_error_sum(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, Scalar factor);

/// Binary cross-entropy summed over elements and multiplied by `factor`,
/// evaluated from pre-sigmoid logits as max(z,0) - z*t + log1p(exp(-|z|)).
template <typename Scalar>
Tensor<Scalar> bce_with_logits_sum(const Tensor<Scalar>& logits, const Tensor<Scalar>& target, Scalar factor);

}  // namespace sfanet
