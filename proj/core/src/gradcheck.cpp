#include "fairlatent/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fairlatent/errors.hpp"

namespace fairlatent::ad {

namespace {

double evaluate(const ScalarFunction& f, const Tensor& x) {
  Graph g;
  Var out = f(g, g.constant(x));
  if (out.value().size() != 1) throw ContractError("grad_check: function output is not scalar");
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check_detailed(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("grad_check: step h must be positive");

  GradCheckResult result;
  {
    Graph g;
    Var xv = g.variable(x);
    Var out = f(g, xv);
    if (out.value().size() != 1) {
      throw ContractError("grad_check: function output is not scalar (shape " + shape_string(out.shape()) + ")");
    }
    g.backward(out);
    result.analytic = g.grad(xv);
  }

  result.numeric = Tensor::zeros(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = evaluate(f, probe);
    probe[i] = orig - h;
    const double fm = evaluate(f, probe);
    probe[i] = orig;
    result.numeric[i] = (fp - fm) / (2.0 * h);

    const double err = std::abs(result.analytic[i] - result.numeric[i]) / std::max(1.0, std::abs(result.numeric[i]));
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace fairlatent::ad
