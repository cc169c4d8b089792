#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fairlatent/tensor.hpp"

namespace fairlatent::diag {

/// Contrastive bound over K matched pairs (rows of z0 and z1):
/// (1/K) sum_i log softmax_j(z0_i . z1_j)[i] + log K.
double i_nce(const Tensor& z0, const Tensor& z1);

/// Class-weighted mean of log det(C_{Z|y} + ridge I) minus
/// lambda * log det(C_Z + ridge I). Each class needs >= 2 samples.
double ib_estimate(const Tensor& z, std::span<const int> y, double lambda, double ridge = 1e-8);

/// Differential entropy of N(mu, C): d/2 + d log(2 pi)/2 + log det(C)/2.
double gaussian_entropy(const Tensor& c);

struct JensenGap {
  double sum_log_eigen;  // sum_i log lambda_i = log det C
  double bound;          // d log(mean lambda)
  double gap;            // bound - sum_log_eigen >= 0
};

/// Requires a symmetric matrix with positive eigenvalues.
JensenGap jensen_gap(const Tensor& c);

struct NormConcentration {
  double mean_sq_norm;
  double target;  // d_y * c
  double relative_deviation;
};

NormConcentration norm_concentration(const Tensor& z_block, double c);

struct Thm2Row {
  double angle_deg;
  double distance;  // |z0_i - z1_i|
  double i_nce;
};

/// K pairs in 2K dimensions with squared norm `radius`: z0_i = sqrt(R) e_{2i},
/// z1_i = sqrt(R)(cos t e_{2i} + sin t e_{2i+1}). Cross pairs are orthogonal.
std::vector<Thm2Row> thm2_monotonicity(double radius, std::span<const double> angles_deg, std::size_t k);

/// 0, 10, ..., 90 degrees.
std::vector<double> default_angle_grid();

}  // namespace fairlatent::diag
