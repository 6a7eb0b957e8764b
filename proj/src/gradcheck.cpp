#include "mixmatch/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mixmatch {

GradCheckResult grad_check(const std::function<Tensor64()>& fn,
                           std::vector<Tensor64> leaves, double eps) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Tensor64 out;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    out = fn();
    if (out.numel() != 1) {
      throw ContractError("grad_check: function must return a scalar, got " +
                          out.shape().str());
    }
    tape.backward(out);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    if (leaf.has_grad()) {
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.emplace_back(static_cast<std::size_t>(leaf.numel()), 0.0);
    }
  }

  GradCheckResult result;
  NoGradScope<double> no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = fn().item();
      values[i] = saved - eps;
      const double minus = fn().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[l][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      if (err > result.max_relative_error) {
        result = {err, l, i, a, numeric};
      }
    }
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  return result;
}

double grad_check(const std::function<Tensor64(const Tensor64&)>& fn,
                  const Tensor64& x, double eps) {
  return grad_check([&] { return fn(x); }, {x}, eps).max_relative_error;
}

}  // namespace mixmatch
