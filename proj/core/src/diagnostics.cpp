#include "fairlatent/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "fairlatent/errors.hpp"
#include "fairlatent/linalg.hpp"

namespace fairlatent::diag {

double i_nce(const Tensor& z0, const Tensor& z1) {
  if (z0.rank() != 2 || z0.shape() != z1.shape()) throw DimensionError("i_nce: paired groups differ in shape");
  const std::size_t k = z0.rows(), w = z0.cols();
  if (k < 1) throw ContractError("i_nce needs K >= 1");
  double total = 0.0;
  std::vector<double> scores(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < w; ++c) s += z0.at(i, c) * z1.at(j, c);
      scores[j] = s;
    }
    const double m = *std::max_element(scores.begin(), scores.end());
    double lse = 0.0;
    for (double s : scores) lse += std::exp(s - m);
    total += scores[i] - (m + std::log(lse));
  }
  return total / static_cast<double>(k) + std::log(static_cast<double>(k));
}

namespace {

double ridge_logdet(Tensor c, double ridge) {
  for (std::size_t i = 0; i < c.rows(); ++i) c.at(i, i) += ridge;
  return linalg::cholesky_log_determinant(c);
}

}  // namespace

double ib_estimate(const Tensor& z, std::span<const int> y, double lambda, double ridge) {
  if (y.size() != z.rows()) throw DimensionError("ib_estimate: label count does not match rows");
  if (!(lambda > 0)) throw ContractError("ib_estimate needs lambda > 0");
  if (ridge < 0) throw ContractError("ib_estimate needs ridge >= 0");
  std::map<int, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < y.size(); ++i) classes[y[i]].push_back(i);
  double conditional = 0.0;
  for (const auto& [label, rows] : classes) {
    if (rows.size() < 2) {
      throw InsufficientBatchError("class " + std::to_string(label) + " has a single sample");
    }
    const double w = static_cast<double>(rows.size()) / static_cast<double>(z.rows());
    conditional += w * ridge_logdet(linalg::covariance(gather_rows(z, rows)), ridge);
  }
  return conditional - lambda * ridge_logdet(linalg::covariance(z), ridge);
}

double gaussian_entropy(const Tensor& c) {
  const double d = static_cast<double>(c.rows());
  return 0.5 * d + 0.5 * d * std::log(2.0 * std::numbers::pi) + 0.5 * linalg::cholesky_log_determinant(c);
}

JensenGap jensen_gap(const Tensor& c) {
  if (c.rank() != 2 || c.rows() != c.cols()) throw DimensionError("jensen_gap expects a square matrix");
  const auto eig = linalg::symmetric_eigenvalues(c);
  double sum_log = 0.0, mean = 0.0;
  for (double l : eig) {
    if (!(l > 0)) throw DegenerateDataError("jensen_gap needs positive eigenvalues");
    sum_log += std::log(l);
    mean += l;
  }
  const double d = static_cast<double>(eig.size());
  mean /= d;
  const double bound = d * std::log(mean);
  return {sum_log, bound, bound - sum_log};
}

NormConcentration norm_concentration(const Tensor& z, double c) {
  if (z.rows() == 0) throw ContractError("norm_concentration needs samples");
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (double v : z.row_span(i)) total += v * v;
  const double mean = total / static_cast<double>(z.rows());
  const double target = static_cast<double>(z.cols()) * c;
  return {mean, target, std::abs(mean - target) / target};
}

std::vector<Thm2Row> thm2_monotonicity(double radius, std::span<const double> angles_deg, std::size_t k) {
  if (k < 1) throw ContractError("thm2_monotonicity needs K >= 1");
  if (!(radius > 0)) throw ContractError("thm2_monotonicity needs a positive radius");
  const double r = std::sqrt(radius);
  std::vector<Thm2Row> out;
  for (double deg : angles_deg) {
    const double t = deg * std::numbers::pi / 180.0;
    Tensor z0 = Tensor::zeros({k, 2 * k});
    Tensor z1 = Tensor::zeros({k, 2 * k});
    for (std::size_t i = 0; i < k; ++i) {
      z0.at(i, 2 * i) = r;
      z1.at(i, 2 * i) = r * std::cos(t);
      z1.at(i, 2 * i + 1) = r * std::sin(t);
    }
    const double dist = r * std::sqrt(2.0 * (1.0 - std::cos(t)));
    out.push_back({deg, dist, i_nce(z0, z1)});
  }
  return out;
}

std::vector<double> default_angle_grid() {
  std::vector<double> out;
  for (int a = 0; a <= 90; a += 10) out.push_back(a);
  return out;
}

}  // namespace fairlatent::diag
