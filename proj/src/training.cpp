#include "sfanet/training.hpp"

#include "sfanet/ops.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <stdexcept>

namespace sfanet {

namespace {

template <typename Scalar>
Scalar reduction_factor(const Tensor<Scalar>& t, PixelReduction reduction) {
  const Index n = t.dim(0);
  const Index per_image = t.numel() / n;
  return reduction == PixelReduction::Sum ? Scalar(1) / Scalar(n) : Scalar(1) / Scalar(n * per_image);
}

template <typename Scalar>
void require_batched(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": prediction " + shape_string(a.shape()) + " vs target " +
                                shape_string(b.shape()));
  }
  if (a.rank() < 1 || a.dim(0) < 1) throw std::invalid_argument(std::string(op) + ": empty batch");
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (max_steps < 0 || checkpoint_every < 0 || eval_every < 0) {
    throw std::invalid_argument("max_steps, checkpoint_every and eval_every must be non-negative");
  }
}

template <typename Scalar>
Tensor<Scalar> density_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, PixelReduction reduction) {
  require_batched("density_loss", pred, target);
  return squared_error_sum(pred, target, reduction_factor(pred, reduction));
}

template <typename Scalar>
Tensor<Scalar> attention_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target, PixelReduction reduction) {
  require_batched("attention_loss", logits, target);
  if (!((target.data() == Scalar(0)) || (target.data() == Scalar(1))).all()) {
    throw std::invalid_argument("attention_loss: target must be binary");
  }
  return bce_with_logits_sum(logits, target, reduction_factor(logits, reduction));
}

template <typename Scalar>
Tensor<Scalar> combined_loss(const Tensor<Scalar>& density_term, const std::optional<Tensor<Scalar>>& attention_term,
                             Scalar alpha) {
  if (!attention_term || !attention_term->defined()) return density_term;
  return add(density_term, scale(*attention_term, alpha));
}

template <typename Scalar>
bool adam_step(std::span<Parameter<Scalar>> params, AdamState<Scalar>& state, const TrainConfig& cfg) {
  for (const auto& p : params) {
    if (p.tensor.has_grad() && !p.tensor.grad().isFinite().all()) {
      spdlog::warn("adam step {} rejected: non-finite gradient in {}", state.step + 1, p.name);
      return false;
    }
  }
  const std::int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const auto b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const auto wd = static_cast<Scalar>(cfg.weight_decay), lr = static_cast<Scalar>(cfg.lr);
  const auto eps = static_cast<Scalar>(cfg.adam_eps);
  const auto c1 = static_cast<Scalar>(bc1), c2 = static_cast<Scalar>(bc2);
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    auto& w = p.tensor.data();
    auto& m = state.exp_avg[p.name];
    auto& v = state.exp_avg_sq[p.name];
    if (m.size() != w.size()) m = Buffer<Scalar>::Zero(w.size());
    if (v.size() != w.size()) v = Buffer<Scalar>::Zero(w.size());
    const Buffer<Scalar> g = p.tensor.grad() + wd * w;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    w -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
  state.step = t;
  return true;
}

template <typename Scalar>
StepLosses evaluate_loss(Model<Scalar>& model, const Batch<Scalar>& batch, const TrainConfig& cfg) {
  NoGradGuard no_grad;
  std::vector<BatchNormState<Scalar>> saved;
  for (const auto& bn : model.batch_norms()) saved.push_back(*bn.state);
  const auto out = model.forward(batch.images, Mode::Train);
  auto norms = model.batch_norms();
  for (std::size_t i = 0; i < norms.size(); ++i) *norms[i].state = saved[i];
  StepLosses l;
  l.density = density_loss(out.density, batch.density, cfg.reduction).item();
  if (out.attention_logits.defined()) l.attention = attention_loss(out.attention_logits, batch.attention, cfg.reduction).item();
  l.total = l.density + (out.attention_logits.defined() ? cfg.alpha * l.attention : 0.0);
  return l;
}

template <typename Scalar>
StepLosses train_step(Model<Scalar>& model, const Batch<Scalar>& batch, AdamState<Scalar>& state,
                      const TrainConfig& cfg) {
  model.zero_grad();
  const auto out = model.forward(batch.images, Mode::Train);
  const auto dl = density_loss(out.density, batch.density, cfg.reduction);
  std::optional<Tensor<Scalar>> al;
  if (out.attention_logits.defined()) al = attention_loss(out.attention_logits, batch.attention, cfg.reduction);
  const auto loss = combined_loss(dl, al, static_cast<Scalar>(cfg.alpha));
  backward(loss);

  StepLosses l;
  l.total = loss.item();
  l.density = dl.item();
  l.attention = al ? al->item() : 0.0;
  auto params = model.parameters();
  l.applied = adam_step(std::span<Parameter<Scalar>>(params), state, cfg);
  return l;
}

#define SFANET_INSTANTIATE_TRAINING(S)                                                                   \
  template Tensor<S> density_loss(const Tensor<S>&, const Tensor<S>&, PixelReduction);                  \
  template Tensor<S> attention_loss(const Tensor<S>&, const Tensor<S>&, PixelReduction);                \
  template Tensor<S> combined_loss(const Tensor<S>&, const std::optional<Tensor<S>>&, S);               \
  template bool adam_step(std::span<Parameter<S>>, AdamState<S>&, const TrainConfig&);                  \
  template StepLosses evaluate_loss(Model<S>&, const Batch<S>&, const TrainConfig&);                    \
  template StepLosses train_step(Model<S>&, const Batch<S>&, AdamState<S>&, const TrainConfig&);

SFANET_INSTANTIATE_TRAINING(float)
SFANET_INSTANTIATE_TRAINING(double)

#undef SFANET_INSTANTIATE_TRAINING

}  // namespace sfanet
