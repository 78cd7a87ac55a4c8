#include "sfanet/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace sfanet {

namespace {

struct BackboneSpec {
  const char* name;
  Index channels;
  bool pool_before;
};

// VGG16 conv1_1 .. conv5_3; a 2x2 max-pool precedes each block after the first.
constexpr BackboneSpec kBackbone[] = {
    {"conv1_1", 64, false},  {"conv1_2", 64, false},  {"conv2_1", 128, true},  {"conv2_2", 128, false},
    {"conv3_1", 256, true},  {"conv3_2", 256, false}, {"conv3_3", 256, false}, {"conv4_1", 512, true},
    {"conv4_2", 512, false}, {"conv4_3", 512, false}, {"conv5_1", 512, true},  {"conv5_2", 512, false},
    {"conv5_3", 512, false},
};
constexpr std::size_t kTapC22 = 3, kTapC33 = 6, kTapC43 = 9, kTapC53 = 12;

template <typename Scalar>
class Initializer {
 public:
  Initializer(std::uint64_t seed, double stddev) : rng_(seed), normal_(0.0, stddev) {}

  ConvLayer<Scalar> conv(Index cin, Index cout, Index k) {
    ConvLayer<Scalar> layer;
    Buffer<Scalar> w(cout * cin * k * k);
    for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(normal_(rng_));
    layer.weight = Tensor<Scalar>::from_data({cout, cin, k, k}, std::move(w), true);
    layer.bias = Tensor<Scalar>::zeros({cout}, true);
    return layer;
  }

  ConvBnRelu<Scalar> conv_bn_relu(Index cin, Index cout, Index k) {
    ConvBnRelu<Scalar> layer;
    layer.conv = conv(cin, cout, k);
    layer.gamma = Tensor<Scalar>::from_data({cout}, Buffer<Scalar>::Ones(cout), true);
    layer.beta = Tensor<Scalar>::zeros({cout}, true);
    layer.bn = BatchNormState<Scalar>(cout);
    return layer;
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

template <typename Scalar>
DecoderPath<Scalar> build_path(const ModelConfig& cfg, Initializer<Scalar>& init) {
  const Index c22 = cfg.scaled(128), c33 = cfg.scaled(256), c43 = cfg.scaled(512), c53 = cfg.scaled(512);
  const Index d256 = cfg.scaled(256), d128 = cfg.scaled(128), d64 = cfg.scaled(64), d32 = cfg.scaled(32);
  DecoderPath<Scalar> p;
  p.t1_reduce = init.conv_bn_relu(c53 + c43, d256, 1);
  p.t1_conv = init.conv_bn_relu(d256, d256, 3);
  p.t2_reduce = init.conv_bn_relu(d256 + c33, d128, 1);
  p.t2_conv = init.conv_bn_relu(d128, d128, 3);
  p.head_reduce = init.conv_bn_relu(d128 + c22, d64, 1);
  p.head_conv1 = init.conv_bn_relu(d64, d64, 3);
  p.head_conv2 = init.conv_bn_relu(d64, d32, 3);
  p.out = init.conv(d32, 1, 1);
  return p;
}

template <typename Scalar>
void copy_layer(const ConvLayer<Scalar>& from, ConvLayer<Scalar>& to) {
  to.weight = from.weight.clone();
  to.weight.set_requires_grad(true);
  to.bias = from.bias.clone();
  to.bias.set_requires_grad(true);
}

template <typename Scalar>
void copy_layer(const ConvBnRelu<Scalar>& from, ConvBnRelu<Scalar>& to) {
  copy_layer(from.conv, to.conv);
  to.gamma = from.gamma.clone();
  to.gamma.set_requires_grad(true);
  to.beta = from.beta.clone();
  to.beta.set_requires_grad(true);
  to.bn = from.bn;
}

template <typename Scalar>
void copy_path(const DecoderPath<Scalar>& from, DecoderPath<Scalar>& to) {
  copy_layer(from.t1_reduce, to.t1_reduce);
  copy_layer(from.t1_conv, to.t1_conv);
  copy_layer(from.t2_reduce, to.t2_reduce);
  copy_layer(from.t2_conv, to.t2_conv);
  copy_layer(from.head_reduce, to.head_reduce);
  copy_layer(from.head_conv1, to.head_conv1);
  copy_layer(from.head_conv2, to.head_conv2);
  copy_layer(from.out, to.out);
}

// Calls on_conv(name, ConvLayer&) and on_block(name, ConvBnRelu&) in
// canonical order.
template <typename Path, typename OnConv, typename OnBlock>
void visit_path(const std::string& prefix, Path& p, OnConv&& on_conv, OnBlock&& on_block) {
  on_block(prefix + "t1.reduce", p.t1_reduce);
  on_block(prefix + "t1.conv", p.t1_conv);
  on_block(prefix + "t2.reduce", p.t2_reduce);
  on_block(prefix + "t2.conv", p.t2_conv);
  on_block(prefix + "head.reduce", p.head_reduce);
  on_block(prefix + "head.conv1", p.head_conv1);
  on_block(prefix + "head.conv2", p.head_conv2);
  on_conv(prefix + "out", p.out);
}

}  // namespace

void ModelConfig::validate() const {
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) {
    throw std::invalid_argument("width_multiplier must be in (0,1], got " + std::to_string(width_multiplier));
  }
  if (!(bn_eps > 0.0)) throw std::invalid_argument("bn_eps must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw std::invalid_argument("bn_momentum must be in [0,1]");
  if (!(init_std > 0.0)) throw std::invalid_argument("init_std must be positive");
}

Index ModelConfig::scaled(Index base) const {
  const auto n = static_cast<Index>(std::lround(static_cast<double>(base) * width_multiplier));
  return n < 1 ? 1 : n;
}

const std::vector<std::string>& backbone_layer_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& s : kBackbone) v.emplace_back(s.name);
    return v;
  }();
  return names;
}

template <typename Scalar>
Model<Scalar>::Model(ModelConfig config) : config_(config) {
  config_.validate();
  Initializer<Scalar> init(config_.init_seed, config_.init_std);
  Index cin = 3;
  for (const auto& spec : kBackbone) {
    const Index cout = config_.scaled(spec.channels);
    fme_.push_back(init.conv_bn_relu(cin, cout, 3));
    cin = cout;
  }
  dmp_ = build_path(config_, init);
  if (config_.amp_enabled) amp_ = build_path(config_, init);
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::clone() const {
  Model copy(config_);
  for (std::size_t i = 0; i < fme_.size(); ++i) copy_layer(fme_[i], copy.fme_[i]);
  copy_path(dmp_, copy.dmp_);
  if (amp_) copy_path(*amp_, *copy.amp_);
  return copy;
}

template <typename Scalar>
template <typename Fn>
void Model<Scalar>::visit(Fn&& fn) {
  auto on_conv = [&](const std::string& name, ConvLayer<Scalar>& c) {
    fn(name + ".weight", &c.weight, nullptr);
    fn(name + ".bias", &c.bias, nullptr);
  };
  auto on_block = [&](const std::string& name, ConvBnRelu<Scalar>& b) {
    on_conv(name, b.conv);
    fn(name + ".bn.weight", &b.gamma, nullptr);
    fn(name + ".bn.bias", &b.beta, nullptr);
    fn(name + ".bn", nullptr, &b.bn);
  };
  for (std::size_t i = 0; i < fme_.size(); ++i) on_block(std::string("fme.") + kBackbone[i].name, fme_[i]);
  visit_path("dmp.", dmp_, on_conv, on_block);
  if (amp_) visit_path(kAttentionPrefix, *amp_, on_conv, on_block);
}

template <typename Scalar>
std::vector<Parameter<Scalar>> Model<Scalar>::parameters() {
  std::vector<Parameter<Scalar>> out;
  visit([&](const std::string& name, Tensor<Scalar>* t, BatchNormState<Scalar>*) {
    if (t) out.push_back({name, *t});
  });
  return out;
}

template <typename Scalar>
std::vector<Parameter<Scalar>> Model<Scalar>::parameters() const {
  return const_cast<Model*>(this)->parameters();
}

template <typename Scalar>
std::vector<NamedBatchNorm<Scalar>> Model<Scalar>::batch_norms() {
  std::vector<NamedBatchNorm<Scalar>> out;
  visit([&](const std::string& name, Tensor<Scalar>*, BatchNormState<Scalar>* bn) {
    if (bn) out.push_back({name, bn});
  });
  return out;
}

template <typename Scalar>
std::vector<NamedBatchNorm<Scalar>> Model<Scalar>::batch_norms() const {
  return const_cast<Model*>(this)->batch_norms();
}

template <typename Scalar>
Index Model<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename Scalar>
void Model<Scalar>::zero_grad() {
  for (auto& p : parameters()) p.tensor.clear_grad();
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::conv_bn_relu(ConvBnRelu<Scalar>& layer, const Tensor<Scalar>& x, Mode mode) {
  const int pad = static_cast<int>(layer.conv.weight.dim(2) / 2);
  auto y = conv2d(x, layer.conv.weight, layer.conv.bias, 1, pad, config_.conv_algorithm);
  y = batchnorm2d(y, layer.gamma, layer.beta, layer.bn, mode, static_cast<Scalar>(config_.bn_eps),
                  static_cast<Scalar>(config_.bn_momentum));
  return relu(y);
}

template <typename Scalar>
FeaturePyramid<Scalar> Model<Scalar>::extract_features(const Tensor<Scalar>& images, Mode mode) {
  if (images.rank() != 4 || images.dim(1) != 3) {
    throw std::invalid_argument("model expects [N,3,H,W] images, got " + shape_string(images.shape()));
  }
  if (images.dim(2) % 16 != 0 || images.dim(3) % 16 != 0) {
    throw std::invalid_argument("model input height and width must be multiples of 16, got " +
                                shape_string(images.shape()));
  }
  FeaturePyramid<Scalar> f;
  Tensor<Scalar> x = images;
  for (std::size_t i = 0; i < fme_.size(); ++i) {
    if (kBackbone[i].pool_before) x = maxpool2x2(x);
    x = conv_bn_relu(fme_[i], x, mode);
    if (i == kTapC22) f.c22 = x;
    if (i == kTapC33) f.c33 = x;
    if (i == kTapC43) f.c43 = x;
    if (i == kTapC53) f.c53 = x;
  }
  return f;
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::decode(DecoderPath<Scalar>& path, const FeaturePyramid<Scalar>& f, Mode mode) {
  const auto up = config_.upsample;
  auto x = concat_channels(upsample2x(f.c53, up), f.c43);
  x = conv_bn_relu(path.t1_reduce, x, mode);
  x = upsample2x(conv_bn_relu(path.t1_conv, x, mode), up);
  x = concat_channels(x, f.c33);
  x = conv_bn_relu(path.t2_reduce, x, mode);
  x = upsample2x(conv_bn_relu(path.t2_conv, x, mode), up);
  x = concat_channels(x, f.c22);
  x = conv_bn_relu(path.head_reduce, x, mode);
  x = conv_bn_relu(path.head_conv1, x, mode);
  return conv_bn_relu(path.head_conv2, x, mode);
}

template <typename Scalar>
ModelOutput<Scalar> Model<Scalar>::forward(const Tensor<Scalar>& images, Mode mode) {
  const auto features = extract_features(images, mode);
  ModelOutput<Scalar> out;
  out.density_features = decode(dmp_, features, mode);
  const auto& f = out.density_features;
  if (amp_) {
    auto f_att = decode(*amp_, features, mode);
    out.attention_logits = conv2d(f_att, amp_->out.weight, amp_->out.bias, 1, 0, config_.conv_algorithm);
    out.attention = sigmoid(out.attention_logits);
    out.refined_features = mul_broadcast_channel(f, out.attention);
  } else {
    out.attention = Tensor<Scalar>::constant({f.dim(0), 1, f.dim(2), f.dim(3)}, Scalar(1));
    out.refined_features = f;
  }
  out.density = conv2d(out.refined_features, dmp_.out.weight, dmp_.out.bias, 1, 0, config_.conv_algorithm);
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace sfanet
