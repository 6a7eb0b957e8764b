#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mixmatch/tensor.hpp"

namespace mixmatch {

struct AdamHyper {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments, one pair per parameter, in registration order.
template <class Real>
struct AdamState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update using each parameter's accumulated
/// gradient. Parameters without a gradient count as zero-gradient; those
/// with requires_grad off (frozen) are left untouched.
template <class Real>
void adam_step(std::span<BasicTensor<Real>> params, AdamState<Real>& state,
               const AdamHyper& hyper);

/// Owns a parameter list and its Adam state.
template <class Real>
class Adam {
 public:
  Adam(std::vector<BasicTensor<Real>> params, AdamHyper hyper)
      : params_(std::move(params)), hyper_(hyper) {}

  void step() { adam_step<Real>(params_, state_, hyper_); }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const AdamState<Real>& state() const { return state_; }
  std::span<const BasicTensor<Real>> params() const { return params_; }
  AdamHyper& hyper() { return hyper_; }

 private:
  std::vector<BasicTensor<Real>> params_;
  AdamState<Real> state_;
  AdamHyper hyper_;
};

}  // namespace mixmatch
