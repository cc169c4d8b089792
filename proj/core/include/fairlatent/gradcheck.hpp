#pragma once

#include <cstddef>
#include <functional>

#include "fairlatent/autodiff.hpp"

namespace fairlatent::ad {

/// Builds a scalar-valued expression of `x` on the given graph.
using ScalarFunction = std::function<Var(Graph&, Var x)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  Tensor analytic;
  Tensor numeric;
};

/// Compares reverse-mode gradients with central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h. Per-coordinate error is
/// |g_ad - g_fd| / max(1, |g_fd|).
GradCheckResult grad_check_detailed(const ScalarFunction& f, const Tensor& x, double h);

inline double grad_check(const ScalarFunction& f, const Tensor& x, double h) {
  return grad_check_detailed(f, x, h).max_relative_error;
}

}  // namespace fairlatent::ad
