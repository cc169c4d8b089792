#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fairlatent/diagnostics.hpp"
#include "fairlatent/errors.hpp"
#include "fairlatent/linalg.hpp"
#include "oracles.hpp"

namespace {

using namespace fairlatent;

Tensor random_psd(std::size_t d, std::mt19937_64& rng) {
  const Tensor a = oracle::random_tensor(d, d, rng);
  Tensor c = linalg::matmul(a, linalg::transpose(a));
  for (std::size_t i = 0; i < d; ++i) c.at(i, i) += 1e-3;
  return c;
}

TEST(INce, Examples) {
  EXPECT_NEAR(diag::i_nce(Tensor::matrix({{0.3, 2.0}}), Tensor::matrix({{-1.0, 0.5}})), 0.0, 1e-15);
  const Tensor eye = Tensor::identity(2);
  EXPECT_NEAR(diag::i_nce(eye, eye), std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)) + std::log(2.0), 1e-15);
  EXPECT_NEAR(diag::i_nce(eye, eye), 0.3798, 1e-4);
  const Tensor same = Tensor::full({4, 3}, 0.5);
  EXPECT_NEAR(diag::i_nce(same, same), 0.0, 1e-14);
}

TEST(INce, BoundedByLogK) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 1 + rng() % 16;
    const Tensor z0 = oracle::random_tensor(k, 4, rng, 3.0);
    const Tensor z1 = oracle::random_tensor(k, 4, rng, 3.0);
    EXPECT_LE(diag::i_nce(z0, z1), std::log(static_cast<double>(k)) + 1e-12);
  }
  const Tensor big = Tensor::matrix({{400, 0}, {0, 400}});
  EXPECT_TRUE(std::isfinite(diag::i_nce(big, big)));
}

TEST(GaussianEntropy, Examples) {
  const double unit = 0.5 + 0.5 * std::log(2 * std::numbers::pi);
  EXPECT_NEAR(diag::gaussian_entropy(Tensor::matrix({{1}})), unit, 1e-15);
  EXPECT_NEAR(diag::gaussian_entropy(Tensor::matrix({{1}})), 1.4189, 1e-4);
  EXPECT_NEAR(diag::gaussian_entropy(Tensor::identity(2)), 2 * unit, 1e-15);
  EXPECT_NEAR(diag::gaussian_entropy(Tensor::matrix({{4}})) - diag::gaussian_entropy(Tensor::matrix({{1}})),
              std::log(2.0), 1e-15);
}

TEST(JensenGap, Examples) {
  EXPECT_NEAR(diag::jensen_gap(Tensor::matrix({{2.5, 0}, {0, 2.5}})).gap, 0.0, 1e-12);
  const diag::JensenGap g = diag::jensen_gap(Tensor::matrix({{1, 0}, {0, 4}}));
  EXPECT_NEAR(g.sum_log_eigen, std::log(4.0), 1e-12);
  EXPECT_NEAR(g.bound, 2 * std::log(2.5), 1e-12);
  EXPECT_NEAR(g.gap, 0.4463, 1e-4);
  EXPECT_THROW(diag::jensen_gap(Tensor::matrix({{1, 0}, {0, 0}})), DegenerateDataError);
}

TEST(JensenGap, NonnegativeOnRandomPsdAndZeroOnlyForEqualEigenvalues) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 1000; ++t) {
    const Tensor c = random_psd(2 + t % 5, rng);
    const diag::JensenGap g = diag::jensen_gap(c);
    EXPECT_GE(g.gap, -1e-12);
    EXPECT_GT(g.gap, 1e-9);
  }
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 2 + t % 5;
    const Tensor q = linalg::random_orthogonal(d, rng);
    Tensor c = linalg::matmul(q, linalg::transpose(q));
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= 0.5 + t;
    EXPECT_LT(std::abs(diag::jensen_gap(c).gap), 1e-9);
  }
}

TEST(Eigenvalues, JacobiMatchesEigen) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Tensor c = random_psd(2 + t % 7, rng);
    const auto ours = linalg::symmetric_eigenvalues(c);
    const auto ref = oracle::eigen_eigenvalues(c);
    ASSERT_EQ(ours.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(ours[i], ref[i], 1e-9 * std::max(1.0, ref.back()));
  }
}

TEST(IbEstimate, EqualCovariancesGiveZero) {
  // Both classes are the same point cloud, so every conditional covariance equals the overall one.
  std::mt19937_64 rng(4);
  const Tensor half = oracle::random_tensor(50, 3, rng);
  Tensor z = Tensor::zeros({100, 3});
  std::vector<int> y(100);
  for (std::size_t i = 0; i < 100; ++i) {
    for (std::size_t j = 0; j < 3; ++j) z.at(i, j) = half.at(i % 50, j);
    y[i] = i < 50 ? 0 : 1;
  }
  EXPECT_LT(std::abs(diag::ib_estimate(z, y, 1.0)), 1e-6);
}

TEST(IbEstimate, SeparatedClassesAreNegativeAndDecreaseWithSeparation) {
  std::mt19937_64 rng(5);
  const Tensor noise = oracle::random_tensor(400, 2, rng);
  std::vector<int> y(400);
  for (std::size_t i = 0; i < 400; ++i) y[i] = i % 2;
  double previous = 1e9;
  for (double gap : {0.5, 1.0, 2.0, 4.0}) {
    Tensor z = noise;
    for (std::size_t i = 0; i < 400; ++i) z.at(i, 0) += y[i] == 1 ? gap : -gap;
    const double v = diag::ib_estimate(z, y, 1.0);
    EXPECT_LT(v, 0.0);
    EXPECT_LT(v, previous);
    previous = v;
  }
}

TEST(IbEstimate, Errors) {
  const Tensor z = Tensor::matrix({{1, 2}, {3, 4}, {5, 7}});
  const std::vector<int> singleton{0, 0, 1};
  EXPECT_THROW(diag::ib_estimate(z, singleton, 1.0), InsufficientBatchError);
  const Tensor rank_deficient = Tensor::matrix({{1, 2}, {2, 4}, {3, 6}, {4, 8}});
  const std::vector<int> y{0, 1, 0, 1};
  EXPECT_THROW(diag::ib_estimate(rank_deficient, y, 1.0, 0.0), DegenerateDataError);
}

TEST(NormConcentration, GaussianRowsConcentrate) {
  std::mt19937_64 rng(6);
  const Tensor z = oracle::random_tensor(4096, 8, rng, 1.0);
  const diag::NormConcentration r = diag::norm_concentration(z, 1.0);
  EXPECT_EQ(r.target, 8.0);
  EXPECT_LT(r.relative_deviation, 0.10);
  const diag::NormConcentration zero = diag::norm_concentration(Tensor::zeros({10, 8}), 1.0);
  EXPECT_EQ(zero.mean_sq_norm, 0.0);
  EXPECT_EQ(zero.relative_deviation, 1.0);
}

TEST(Thm2, StrictlyDecreasingOverAngleGrid) {
  const auto rows = diag::thm2_monotonicity(1.0, diag::default_angle_grid(), 32);
  ASSERT_EQ(rows.size(), 10u);
  EXPECT_EQ(rows.front().angle_deg, 0.0);
  EXPECT_EQ(rows.front().distance, 0.0);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_LT(rows[i].i_nce, rows[i - 1].i_nce);
    EXPECT_GT(rows[i].distance, rows[i - 1].distance);
  }
  EXPECT_NEAR(rows.back().i_nce, 0.0, 1e-12);
  for (const auto& r : rows) EXPECT_LE(r.i_nce, std::log(32.0) + 1e-12);
}

}  // namespace
