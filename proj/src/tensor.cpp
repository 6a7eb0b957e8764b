#include "mixmatch/tensor.hpp"

#include <sstream>

namespace mixmatch {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
  return os.str();
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::zeros(Shape shape, bool requires_grad) {
  return full(shape, Real(0), requires_grad);
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::full(Shape shape, Real value,
                                          bool requires_grad) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw DimensionError("tensor shape must be positive on every axis, got " +
                         shape.str());
  }
  auto node = std::make_shared<TensorNode<Real>>();
  node->shape = shape;
  node->value.assign(static_cast<std::size_t>(shape.numel()), value);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::from(Shape shape, std::vector<Real> values,
                                          bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape.str());
  }
  auto node = std::make_shared<TensorNode<Real>>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::scalar(Real value, bool requires_grad) {
  return full(Shape{}, value, requires_grad);
}

template <class Real>
Real BasicTensor<Real>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on a tensor of shape " + shape().str());
  }
  return node_->value[0];
}

template <class Real>
Real BasicTensor<Real>::at(std::int64_t n, std::int64_t c, std::int64_t h,
                           std::int64_t w) const {
  const Shape& s = shape();
  return node_->value[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

template <class Real>
BasicTensor<Real> BasicTensor<Real>::clone() const {
  return from(shape(), node_->value);
}

template <class Real>
void Tape<Real>::backward(const BasicTensor<Real>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss");
  }
  if (!loss.requires_grad()) return;
  auto& seed = loss.node()->grad_buffer();
  seed[0] += Real(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (visit_hook_) visit_hook_(it->op);
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
}

template <class Real>
Tape<Real>*& active_tape_slot() {
  thread_local Tape<Real>* slot = nullptr;
  return slot;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tape<float>*& active_tape_slot<float>();
template Tape<double>*& active_tape_slot<double>();

}  // namespace mixmatch
