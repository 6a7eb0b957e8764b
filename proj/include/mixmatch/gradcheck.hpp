#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mixmatch/tensor.hpp"

namespace mixmatch {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares tape gradients of a scalar function against central finite
/// differences, in double precision. The function is re-evaluated with each
/// leaf element perturbed by +-eps; it must be deterministic. Relative error
/// is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const std::function<Tensor64()>& fn,
                           std::vector<Tensor64> leaves, double eps = 1e-6);

/// Single-input form: fn(x) with x the only leaf.
double grad_check(const std::function<Tensor64(const Tensor64&)>& fn,
                  const Tensor64& x, double eps = 1e-6);

struct GradSuiteEntry {
  std::string name;
  double max_relative_error;
};

/// Gradient checks over every primitive and every loss term composed with a
/// micro-network, plus the combined objective. Used by the CLI and the
/// acceptance suite.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed);

}  // namespace mixmatch
