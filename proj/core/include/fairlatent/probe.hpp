#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fairlatent/tensor.hpp"

namespace fairlatent {

/// One-layer linear classifier: logits = x * weight + bias.
struct LinearProbe {
  Tensor weight;  // in x classes
  Tensor bias;    // 1 x classes

  std::size_t input_width() const noexcept { return weight.rows(); }
  std::size_t classes() const noexcept { return weight.cols(); }

  /// Uniform(+-1/sqrt(in)) weights and biases.
  static LinearProbe random(std::size_t in, std::size_t classes, std::mt19937_64& rng);

  Tensor logits(const Tensor& x) const;
  std::vector<int> predict(const Tensor& x) const;
  /// Softmax probability of `cls` per row.
  std::vector<double> probability(const Tensor& x, int cls) const;
};

struct ProbeFitConfig {
  std::size_t steps = 600;
  double learning_rate = 0.05;
  double l2 = 1e-4;
};

/// Full-batch multinomial logistic regression trained with Adam.
LinearProbe fit_probe(const Tensor& x, std::span<const int> targets, int classes, const ProbeFitConfig& cfg = {});

}  // namespace fairlatent
