#pragma once

#include "sfanet/ops.hpp"
#include "sfanet/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sfanet {

struct ModelConfig {
  double width_multiplier = 1.0;  ///< in (0, 1], scales every channel count
  bool amp_enabled = true;        ///< false builds the backbone + density path only
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double init_std = 0.01;
  std::uint64_t init_seed = 0;
  UpsampleMode upsample = UpsampleMode::Nearest;
  ConvAlgorithm conv_algorithm = ConvAlgorithm::Gemm;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
  /// round(base * width_multiplier), at least 1.
  Index scaled(Index base) const;
};

/// Prefix shared by every attention-path parameter name.
inline constexpr const char* kAttentionPrefix = "amp.";

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
};

template <typename Scalar>
struct NamedBatchNorm {
  std::string name;  ///< e.g. "fme.conv1_1.bn"
  BatchNormState<Scalar>* state;
};

/// Backbone taps at 1/2, 1/4, 1/8 and 1/16 of the input resolution.
template <typename Scalar>
struct FeaturePyramid {
  Tensor<Scalar> c22, c33, c43, c53;
};

template <typename Scalar>
struct ModelOutput {
  Tensor<Scalar> density;            ///< [N,1,H/2,W/2]
  Tensor<Scalar> attention;          ///< [N,1,H/2,W/2], sigmoid of the logits (ones without AMP)
  Tensor<Scalar> attention_logits;   ///< undefined when the attention path is disabled
  Tensor<Scalar> density_features;   ///< last density-path features before refinement
  Tensor<Scalar> refined_features;   ///< density_features * attention
};

template <typename Scalar>
struct ConvLayer {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

/// conv -> batch norm -> ReLU
template <typename Scalar>
struct ConvBnRelu {
  ConvLayer<Scalar> conv;
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  BatchNormState<Scalar> bn;
};

/// One decoder path: two transfer blocks, the head block and a 1x1 output conv.
template <typename Scalar>
struct DecoderPath {
  ConvBnRelu<Scalar> t1_reduce, t1_conv;
  ConvBnRelu<Scalar> t2_reduce, t2_conv;
  ConvBnRelu<Scalar> head_reduce, head_conv1, head_conv2;
  ConvLayer<Scalar> out;
};

template <typename Scalar>
class Model {
 public:
  explicit Model(ModelConfig config);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Independent deep copy (parameters and running statistics).
  Model clone() const;

  const ModelConfig& config() const { return config_; }

  /// H and W must be multiples of 16.
  ModelOutput<Scalar> forward(const Tensor<Scalar>& images, Mode mode);
  FeaturePyramid<Scalar> extract_features(const Tensor<Scalar>& images, Mode mode);

  /// Parameters in canonical order with hierarchical names. The tensors
  /// alias the model's storage.
  std::vector<Parameter<Scalar>> parameters();
  std::vector<Parameter<Scalar>> parameters() const;
  std::vector<NamedBatchNorm<Scalar>> batch_norms();
  std::vector<NamedBatchNorm<Scalar>> batch_norms() const;

  Index parameter_count() const;
  void zero_grad();

  /// Mutable access for tests that need to pin particular weights.
  DecoderPath<Scalar>& density_path() { return dmp_; }
  std::optional<DecoderPath<Scalar>>& attention_path() { return amp_; }

 private:
  Tensor<Scalar> conv_bn_relu(ConvBnRelu<Scalar>& layer, const Tensor<Scalar>& x, Mode mode);
  Tensor<Scalar> decode(DecoderPath<Scalar>& path, const FeaturePyramid<Scalar>& f, Mode mode);
  template <typename Fn>
  void visit(Fn&& fn);

  ModelConfig config_;
  std::vector<ConvBnRelu<Scalar>> fme_;  // conv1_1 .. conv5_3
  DecoderPath<Scalar> dmp_;
  std::optional<DecoderPath<Scalar>> amp_;
};

/// Names of the 13 backbone convolutions, in order.
const std::vector<std::string>& backbone_layer_names();

}  // namespace sfanet
