#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace sfanet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Number of elements described by `shape`; the empty shape is a scalar.
Index shape_numel(const Shape& shape);

/// "[2,3,5,5]" style rendering used in diagnostics.
std::string shape_string(const Shape& shape);

template <typename Scalar>
struct TensorStorage {
  Shape shape;
  Buffer<Scalar> data;
  Buffer<Scalar> grad;  // empty until something accumulates into it
  bool requires_grad = false;
};

/// Dense row-major N-d array with a shared handle. Copies alias the same
/// storage; use clone() for a deep copy.
template <typename Scalar>
class Tensor {
 public:
  using Storage = TensorStorage<Scalar>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Storage> storage) : storage_(std::move(storage)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor constant(const Shape& shape, Scalar value);
  static Tensor from_data(const Shape& shape, Buffer<Scalar> data, bool requires_grad = false);
  static Tensor scalar(Scalar value);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return storage_->shape; }
  Index rank() const { return static_cast<Index>(storage_->shape.size()); }
  Index dim(Index axis) const { return storage_->shape.at(static_cast<std::size_t>(axis)); }
  Index numel() const { return storage_->data.size(); }

  Buffer<Scalar>& data() { return storage_->data; }
  const Buffer<Scalar>& data() const { return storage_->data; }
  Scalar item() const;

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool on) const { storage_->requires_grad = on; }

  bool has_grad() const { return storage_->grad.size() == storage_->data.size() && numel() > 0; }
  const Buffer<Scalar>& grad() const { return storage_->grad; }
  // Shallow const: these touch the shared storage, not the handle.
  /// Adds `g` into the gradient buffer, allocating zeros first if needed.
  void accumulate_grad(const Buffer<Scalar>& g) const;
  Buffer<Scalar>& mutable_grad() const;
  void clear_grad() const { storage_->grad.resize(0); }

  /// Deep copy of values only; the result does not require grad.
  Tensor clone() const;
  /// Same values, cut from the tape.
  Tensor detach() const { return clone(); }

  /// NCHW offset helper for rank-4 tensors.
  Index offset(Index n, Index c, Index h, Index w) const {
    const auto& s = storage_->shape;
    return ((n * s[1] + c) * s[2] + h) * s[3] + w;
  }

  const Storage* storage() const { return storage_.get(); }
  const std::shared_ptr<Storage>& handle() const { return storage_; }
  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  std::shared_ptr<Storage> storage_;
};

/// Whether newly executed ops are recorded on the tape.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Ordered log of differentiable ops executed on this thread. Backward
/// replays it in exact reverse order.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(const Buffer<Scalar>& grad_output)>;

  static Tape& active();

  void record(const Tensor<Scalar>& output, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void backward(const Tensor<Scalar>& loss);

 private:
  struct Entry {
    std::shared_ptr<TensorStorage<Scalar>> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

/// True when an op with these inputs should be recorded.
template <typename Scalar>
bool should_record(std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Seeds d(loss)/d(loss) = 1 and propagates through the active tape, which
/// is cleared afterwards. Rejects non-scalar losses.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  Tape<Scalar>::active().backward(loss);
}

}  // namespace sfanet
