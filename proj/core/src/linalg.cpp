#include "fairlatent/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairlatent/errors.hpp"

namespace fairlatent::linalg {

namespace {

void require_square(const Tensor& a, const char* op) {
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw DimensionError(std::string(op) + " needs a square matrix, got " + shape_string(a.shape()));
  }
}

}  // namespace

LuDecomposition lu_decompose(const Tensor& a) {
  require_square(a, "lu_decompose");
  const std::size_t n = a.rows();
  Tensor u = a;
  Tensor l = Tensor::identity(n);
  LuDecomposition out;
  out.perm.resize(n);
  std::iota(out.perm.begin(), out.perm.end(), 0);

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(u.at(i, k)) > std::abs(u.at(pivot, k))) pivot = i;
    if (u.at(pivot, k) == 0.0) throw DegenerateDataError("lu_decompose: singular matrix");
    if (pivot != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(u.at(k, j), u.at(pivot, j));
      for (std::size_t j = 0; j < k; ++j) std::swap(l.at(k, j), l.at(pivot, j));
      std::swap(out.perm[k], out.perm[pivot]);
      out.permutation_sign = -out.permutation_sign;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = u.at(i, k) / u.at(k, k);
      l.at(i, k) = f;
      for (std::size_t j = k; j < n; ++j) u.at(i, j) -= f * u.at(k, j);
    }
  }
  out.lower = std::move(l);
  out.upper = std::move(u);
  return out;
}

double log_abs_determinant(const Tensor& a) {
  const auto lu = lu_decompose(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) acc += std::log(std::abs(lu.upper.at(i, i)));
  return acc;
}

double cholesky_log_determinant(const Tensor& a) {
  require_square(a, "cholesky_log_determinant");
  const std::size_t n = a.rows();
  Tensor l = Tensor::zeros({n, n});
  double logdet = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l.at(j, k) * l.at(j, k);
    if (!(d > 0.0)) throw DegenerateDataError("matrix is not positive definite");
    const double ljj = std::sqrt(d);
    l.at(j, j) = ljj;
    logdet += 2.0 * std::log(ljj);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      l.at(i, j) = s / ljj;
    }
  }
  return logdet;
}

std::vector<double> symmetric_eigenvalues(const Tensor& a, double tolerance, int max_sweeps) {
  require_square(a, "symmetric_eigenvalues");
  const std::size_t n = a.rows();
  Tensor m = a;
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += m.at(i, j) * m.at(i, j);
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < max_sweeps && off_norm() > tolerance; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m.at(k, p), mkq = m.at(k, q);
          m.at(k, p) = c * mkp - s * mkq;
          m.at(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m.at(p, k), mqk = m.at(q, k);
          m.at(p, k) = c * mpk - s * mqk;
          m.at(q, k) = s * mpk + c * mqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = m.at(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

Tensor random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor q = Tensor::zeros({n, n});
  for (std::size_t col = 0; col < n; ++col) {
    for (;;) {
      std::vector<double> v(n);
      for (auto& x : v) x = normal(rng);
      // Two passes of modified Gram-Schmidt keep columns orthogonal to ~1e-15.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < col; ++k) {
          double dot = 0.0;
          for (std::size_t i = 0; i < n; ++i) dot += v[i] * q.at(i, k);
          for (std::size_t i = 0; i < n; ++i) v[i] -= dot * q.at(i, k);
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-8) continue;
      for (std::size_t i = 0; i < n; ++i) q.at(i, col) = v[i] / norm;
      break;
    }
  }
  return q;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * b[p * m + j];
    }
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out = Tensor::zeros({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor covariance(const Tensor& z) {
  const std::size_t n = z.rows(), k = z.cols();
  if (n < 2) throw InsufficientBatchError("covariance needs at least 2 rows, got " + std::to_string(n));
  std::vector<double> mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) mean[j] += z.at(i, j);
  for (auto& m : mean) m /= static_cast<double>(n);
  Tensor c = Tensor::zeros({k, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a) {
      const double da = z.at(i, a) - mean[a];
      for (std::size_t b = 0; b < k; ++b) c.at(a, b) += da * (z.at(i, b) - mean[b]);
    }
  for (std::size_t i = 0; i < c.size(); ++i) c[i] /= static_cast<double>(n);
  return c;
}

}  // namespace fairlatent::linalg
