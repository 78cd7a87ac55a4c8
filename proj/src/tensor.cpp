#include "sfanet/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace sfanet {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_string(shape));
    n *= e;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(const Shape& shape, bool requires_grad) {
  auto s = std::make_shared<Storage>();
  s->shape = shape;
  s->data = Buffer<Scalar>::Zero(shape_numel(shape));
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(const Shape& shape, Scalar value) {
  auto t = zeros(shape);
  t.data().setConstant(value);
  return t;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_data(const Shape& shape, Buffer<Scalar> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_string(shape));
  }
  auto s = std::make_shared<Storage>();
  s->shape = shape;
  s->data = std::move(data);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value) {
  return constant(Shape{}, value);
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_string(shape()));
  }
  return storage_->data[0];
}

template <typename Scalar>
void Tensor<Scalar>::accumulate_grad(const Buffer<Scalar>& g) const {
  mutable_grad() += g;
}

template <typename Scalar>
Buffer<Scalar>& Tensor<Scalar>::mutable_grad() const {
  if (storage_->grad.size() != storage_->data.size()) {
    storage_->grad = Buffer<Scalar>::Zero(storage_->data.size());
  }
  return storage_->grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  return from_data(shape(), data());
}

template <typename Scalar>
Tape<Scalar>& Tape<Scalar>::active() {
  thread_local Tape tape;
  return tape;
}

template <typename Scalar>
void Tape<Scalar>::record(const Tensor<Scalar>& output, BackwardFn fn) {
  entries_.push_back(Entry{output.handle(), std::move(fn)});
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    entries_.clear();
    throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  Tensor<Scalar> root = loss;
  root.mutable_grad() += Scalar(1);

  // Moving the entries out keeps the tape empty even if a closure throws.
  std::vector<Entry> entries;
  entries.swap(entries_);
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    const auto& out = *it->output;
    if (out.grad.size() != out.data.size()) continue;  // not reachable from loss
    it->fn(out.grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace sfanet
