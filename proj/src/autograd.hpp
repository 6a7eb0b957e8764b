#pragma once

// Internal helpers shared by the op implementations.

#include <initializer_list>
#include <string_view>
#include <utility>
#include <vector>

#include "mixmatch/tensor.hpp"

namespace mixmatch::detail {

template <class Real>
bool should_record(std::initializer_list<const BasicTensor<Real>*> inputs) {
  if (active_tape<Real>() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <class Real>
bool should_record(const std::vector<BasicTensor<Real>>& inputs) {
  if (active_tape<Real>() == nullptr) return false;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

// Wraps freshly computed values in a tensor and, when recording, appends the
// backward closure to the active tape.
template <class Real>
BasicTensor<Real> finish(std::string_view op, const Shape& shape,
                         std::vector<Real> values, bool record,
                         std::vector<NodePtr<Real>> inputs,
                         typename Tape<Real>::BackwardFn backward) {
  auto out = BasicTensor<Real>::from(shape, std::move(values), record);
  if (record) {
    active_tape<Real>()->record(
        {op, std::move(inputs), out.node(), std::move(backward)});
  }
  return out;
}

template <class Real>
bool wants_grad(const NodePtr<Real>& node) {
  return node != nullptr && node->requires_grad;
}

}  // namespace mixmatch::detail
