#include "mixmatch/optim.hpp"

#include <cmath>

namespace mixmatch {

template <class Real>
void adam_step(std::span<BasicTensor<Real>> params, AdamState<Real>& state,
               const AdamHyper& hyper) {
  if (state.m.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), Real(0));
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), Real(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != static_cast<std::size_t>(params[k].numel())) {
      throw DimensionError("adam_step: moment shape mismatch for parameter " +
                           std::to_string(k) + " " + params[k].shape().str());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  const Real b1 = static_cast<Real>(hyper.beta1);
  const Real b2 = static_cast<Real>(hyper.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.requires_grad()) continue;
    if (!p.has_grad()) {
      // Zero gradient: moments decay, parameter still moves by the decayed
      // first moment.
      auto& m = state.m[k];
      auto& v = state.v[k];
      auto values = p.mutable_values();
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = b1 * m[i];
        v[i] = b2 * v[i];
        if (m[i] == Real(0)) continue;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        values[i] -= static_cast<Real>(hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
      }
      continue;
    }
    const auto grad = p.grad();
    auto values = p.mutable_values();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const Real g = grad[i];
      m[i] = b1 * m[i] + (Real(1) - b1) * g;
      v[i] = b2 * v[i] + (Real(1) - b2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      values[i] -= static_cast<Real>(hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
    }
  }
}

template void adam_step(std::span<BasicTensor<float>>, AdamState<float>&, const AdamHyper&);
template void adam_step(std::span<BasicTensor<double>>, AdamState<double>&, const AdamHyper&);

}  // namespace mixmatch
