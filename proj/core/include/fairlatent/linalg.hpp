#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "fairlatent/tensor.hpp"

namespace fairlatent::linalg {

/// P * A = L * U with partial pivoting. `perm[i]` is the source row of row i.
struct LuDecomposition {
  std::vector<std::size_t> perm;
  Tensor lower;  // unit lower triangular
  Tensor upper;
  int permutation_sign = 1;
};

LuDecomposition lu_decompose(const Tensor& a);

/// log|det(A)|; throws DegenerateDataError for a singular matrix.
double log_abs_determinant(const Tensor& a);

/// log det of a symmetric positive definite matrix via Cholesky; throws
/// DegenerateDataError when the matrix is not positive definite.
double cholesky_log_determinant(const Tensor& a);

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// Iterates until the off-diagonal Frobenius norm drops below `tolerance`.
std::vector<double> symmetric_eigenvalues(const Tensor& a, double tolerance = 1e-12, int max_sweeps = 100);

/// Uniformly random orthogonal matrix (Gram-Schmidt on a Gaussian matrix).
Tensor random_orthogonal(std::size_t n, std::mt19937_64& rng);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Population covariance (1/n normalization) of the rows of `z`.
Tensor covariance(const Tensor& z);

}  // namespace fairlatent::linalg
