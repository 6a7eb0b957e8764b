#pragma once

// Dense NCHW tensors and the reverse-mode tape that records operations on
// them. Training runs on BasicTensor<float>; gradient checks replay the same
// graphs on BasicTensor<double>.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixmatch/error.hpp"

namespace mixmatch {

struct Shape {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t plane() const { return h * w; }
  std::int64_t image() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

enum class Mode { kTrain, kEval };

template <class Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;

  // Lazily allocates a zeroed gradient buffer.
  std::vector<Real>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
    return grad;
  }
};

template <class Real>
using NodePtr = std::shared_ptr<TensorNode<Real>>;

/// Handle to a shared, immutable-after-construction tensor node. Copies share
/// storage; optimizers and initializers use the mutable accessors under
/// exclusive access.
template <class Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() = default;
  explicit BasicTensor(NodePtr<Real> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, Real value, bool requires_grad = false);
  static BasicTensor from(Shape shape, std::vector<Real> values,
                          bool requires_grad = false);
  static BasicTensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->shape.numel(); }

  std::span<const Real> values() const { return node_->value; }
  std::span<Real> mutable_values() { return node_->value; }
  const std::vector<Real>& vector() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  Real item() const;
  Real at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  // Deep copy with no gradient tracking.
  BasicTensor clone() const;
  // Same values converted to another scalar type (never tracked).
  template <class Other>
  BasicTensor<Other> cast() const {
    std::vector<Other> out(node_->value.begin(), node_->value.end());
    return BasicTensor<Other>::from(shape(), std::move(out));
  }

  const NodePtr<Real>& node() const { return node_; }

 private:
  NodePtr<Real> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Ordered record of primitive applications. backward() walks the entries in
/// exact reverse order and accumulates into input gradients.
template <class Real>
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<Real>& grad_out)>;

  struct Entry {
    std::string_view op;
    std::vector<NodePtr<Real>> inputs;
    NodePtr<Real> output;
    BackwardFn backward;
  };

  void record(Entry entry) { entries_.push_back(std::move(entry)); }

  // Seeds d(loss)/d(loss) = 1 and propagates. loss must hold one element.
  void backward(const BasicTensor<Real>& loss);

  // Optional observer called with each entry's op name as backward visits it.
  void set_visit_hook(std::function<void(std::string_view)> hook) {
    visit_hook_ = std::move(hook);
  }

  std::size_t size() const { return entries_.size(); }
  std::span<const Entry> entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
  std::function<void(std::string_view)> visit_hook_;
};

template <class Real>
Tape<Real>*& active_tape_slot();

template <class Real>
Tape<Real>* active_tape() {
  return active_tape_slot<Real>();
}

/// Installs a tape as this thread's recording target for its lifetime.
template <class Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& tape) : previous_(active_tape_slot<Real>()) {
    active_tape_slot<Real>() = &tape;
  }
  ~TapeScope() { active_tape_slot<Real>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* previous_;
};

/// Suspends recording (e.g. for evaluation inside a training loop).
template <class Real>
class NoGradScope {
 public:
  NoGradScope() : previous_(active_tape_slot<Real>()) {
    active_tape_slot<Real>() = nullptr;
  }
  ~NoGradScope() { active_tape_slot<Real>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<Real>* previous_;
};

}  // namespace mixmatch
