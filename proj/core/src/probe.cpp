#include "fairlatent/probe.hpp"

#include <algorithm>
#include <cmath>

#include "fairlatent/errors.hpp"
#include "fairlatent/linalg.hpp"

namespace fairlatent {

LinearProbe LinearProbe::random(std::size_t in, std::size_t classes, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  LinearProbe p{Tensor::zeros({in, classes}), Tensor::zeros({1, classes})};
  for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight[i] = u(rng);
  for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] = u(rng);
  return p;
}

Tensor LinearProbe::logits(const Tensor& x) const {
  if (x.cols() != input_width()) {
    throw DimensionError("probe expects width " + std::to_string(input_width()) + ", got " + shape_string(x.shape()));
  }
  Tensor out = linalg::matmul(x, weight);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(i, c) += bias[c];
  return out;
}

std::vector<int> LinearProbe::predict(const Tensor& x) const {
  const Tensor l = logits(x);
  std::vector<int> out(l.rows());
  for (std::size_t i = 0; i < l.rows(); ++i) {
    const auto row = l.row_span(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::vector<double> LinearProbe::probability(const Tensor& x, int cls) const {
  const Tensor l = logits(x);
  std::vector<double> out(l.rows());
  for (std::size_t i = 0; i < l.rows(); ++i) {
    const auto row = l.row_span(i);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    out[i] = std::exp(row[static_cast<std::size_t>(cls)] - m) / z;
  }
  return out;
}

LinearProbe fit_probe(const Tensor& x, std::span<const int> targets, int classes, const ProbeFitConfig& cfg) {
  const std::size_t n = x.rows(), d = x.cols(), k = static_cast<std::size_t>(classes);
  if (targets.size() != n) throw DimensionError("fit_probe: target count does not match rows");
  if (n == 0 || classes < 2) throw ContractError("fit_probe needs samples and >= 2 classes");
  for (int t : targets)
    if (t < 0 || t >= classes) throw ContractError("fit_probe: target out of range");

  LinearProbe p{Tensor::zeros({d, k}), Tensor::zeros({1, k})};
  const std::size_t count = (d + 1) * k;
  std::vector<double> m(count, 0.0), v(count, 0.0), g(count);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> prob(k);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::fill(g.begin(), g.end(), 0.0);
    const Tensor l = p.logits(x);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = l.row_span(i);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (std::size_t c = 0; c < k; ++c) z += prob[c] = std::exp(row[c] - mx);
      for (std::size_t c = 0; c < k; ++c) {
        const double delta = (prob[c] / z - (targets[i] == static_cast<int>(c) ? 1.0 : 0.0)) / static_cast<double>(n);
        for (std::size_t j = 0; j < d; ++j) g[j * k + c] += delta * x.at(i, j);
        g[d * k + c] += delta;
      }
    }
    for (std::size_t j = 0; j < d * k; ++j) g[j] += cfg.l2 * p.weight[j];
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t j = 0; j < count; ++j) {
      m[j] = b1 * m[j] + (1 - b1) * g[j];
      v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
      const double delta = cfg.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
      if (j < d * k)
        p.weight[j] -= delta;
      else
        p.bias[j - d * k] -= delta;
    }
  }
  return p;
}

}  // namespace fairlatent
