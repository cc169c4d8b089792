#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fairlatent/errors.hpp"
#include "fairlatent/flow.hpp"
#include "fairlatent/gradcheck.hpp"
#include "fairlatent/losses.hpp"
#include "oracles.hpp"

namespace {

using namespace fairlatent;

FlowConfig config(std::size_t dim, std::size_t blocks, std::size_t hidden = 16) {
  FlowConfig c;
  c.dim = dim;
  c.num_blocks = blocks;
  c.hidden_width = hidden;
  return c;
}

double max_abs(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

TEST(Flow, IdentityModelIsIdentity) {
  const FlowModel m = FlowModel::identity(config(4, 3), LatentPartition::halves(4));
  std::mt19937_64 rng(1);
  const Tensor e = oracle::random_tensor(5, 4, rng);
  const ForwardResult r = forward(m, e);
  EXPECT_EQ(max_abs(r.z, e), 0.0);
  for (double ld : r.logdet) EXPECT_EQ(ld, 0.0);
  EXPECT_EQ(max_abs(inverse(m, e), e), 0.0);
}

TEST(Flow, DiagonalLogScalesGiveTwoLogTwo) {
  FlowModel m = FlowModel::identity(config(2, 1), LatentPartition::halves(2));
  m.blocks()[0].log_diag = Tensor::matrix({{std::log(2.0), std::log(2.0)}});
  const ForwardResult r = forward(m, Tensor::matrix({{0.3, -0.7}}));
  EXPECT_NEAR(r.logdet[0], 2.0 * std::log(2.0), 1e-15);
  EXPECT_NEAR(r.logdet[0], 1.3863, 1e-4);
  EXPECT_NEAR(r.z[0], 0.6, 1e-15);
  EXPECT_NEAR(r.z[1], -1.4, 1e-15);
}

TEST(Flow, LogdetMatchesFiniteDifferenceJacobian) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FlowModel m = oracle::random_flow(3, 3, 16, seed);
    std::mt19937_64 rng(seed + 100);
    const Tensor e = oracle::random_tensor(1, 3, rng);
    EXPECT_LT(std::abs(forward(m, e).logdet[0] - oracle::fd_log_abs_det(m, e)), 1e-3) << "seed " << seed;
  }
}

TEST(Flow, InverseLogdetIsNegatedForwardLogdet) {
  const FlowModel m = oracle::random_flow(4, 3, 16, 9);
  std::mt19937_64 rng(4);
  const Tensor e = oracle::random_tensor(1, 4, rng);
  const ForwardResult r = forward(m, e);
  EXPECT_NEAR(oracle::fd_log_abs_det_inverse(m, r.z), -r.logdet[0], 1e-3);
}

TEST(Flow, RoundTripDouble) {
  const FlowModel m = oracle::random_flow(8, 4, 64, 2);
  std::mt19937_64 rng(5);
  const Tensor e = oracle::random_tensor(100, 8, rng);
  EXPECT_LT(max_abs(inverse(m, forward(m, e).z), e), 1e-10);
}

TEST(Flow, RoundTripSingle) {
  // Coupling scale 0.05 keeps |z| within the range a trained flow produces.
  const FlowModel m = oracle::random_flow(8, 4, 64, 3, 0.05);
  std::mt19937_64 rng(6);
  const Tensor e = oracle::random_tensor(100, 8, rng);
  const Tensor z = forward(m, e, Precision::f32).z;
  EXPECT_LT(max_abs(inverse(m, z, Precision::f32), e), 1e-5);
}

TEST(Flow, LogdetIsSumOfBlockLogdets) {
  const FlowModel m = oracle::random_flow(6, 4, 16, 7);
  std::mt19937_64 rng(8);
  Tensor x = oracle::random_tensor(10, 6, rng);
  const ForwardResult whole = forward(m, x);
  std::vector<double> total(10, 0.0);
  for (std::size_t b = 0; b < m.blocks().size(); ++b) {
    const ForwardResult part = forward_block(m, b, x);
    for (std::size_t i = 0; i < 10; ++i) total[i] += part.logdet[i];
    x = part.z;
  }
  EXPECT_LT(max_abs(x, whole.z), 1e-12);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(total[i], whole.logdet[i], 1e-12);
}

TEST(Flow, BlockInverseUndoesBlock) {
  const FlowModel m = oracle::random_flow(5, 2, 16, 12);
  std::mt19937_64 rng(13);
  const Tensor x = oracle::random_tensor(7, 5, rng);
  for (std::size_t b = 0; b < 2; ++b) EXPECT_LT(max_abs(inverse_block(m, b, forward_block(m, b, x).z), x), 1e-12);
}

TEST(Flow, CounterfactualLatentsInvertToFiniteEmbeddings) {
  const FlowModel m = oracle::random_flow(8, 4, 64, 21);
  std::mt19937_64 rng(22);
  Tensor z = oracle::random_tensor(50, 8, rng);
  for (std::size_t i = 0; i < z.rows(); ++i) z.at(i, 0) += 6.0;
  EXPECT_TRUE(inverse(m, z).all_finite());
}

TEST(Flow, ActnormStandardizesEveryLayer) {
  FlowModel m(FlowConfig::small(4, 3), LatentPartition::halves(4));
  std::mt19937_64 rng(14);
  Tensor batch = oracle::random_tensor(64, 4, rng, 2.0);
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] += 5.0;
  init_actnorm(m, batch);
  ASSERT_TRUE(m.actnorm_initialized());
  Tensor x = batch;
  for (std::size_t b = 0; b < m.blocks().size(); ++b) {
    const FlowBlock& blk = m.blocks()[b];
    for (std::size_t j = 0; j < 4; ++j) {
      double mean = 0, sq = 0;
      for (std::size_t i = 0; i < 64; ++i) {
        const double v = x.at(i, j) * std::exp(blk.actnorm_log_scale[j]) + blk.actnorm_bias[j];
        mean += v;
        sq += v * v;
      }
      mean /= 64;
      EXPECT_NEAR(mean, 0.0, 1e-6);
      EXPECT_NEAR(sq / 64 - mean * mean, 1.0, 1e-6);
    }
    x = forward_block(m, b, x).z;
  }
}

TEST(Flow, ActnormOnMeanFiveStdTwo) {
  FlowModel m(FlowConfig::small(2, 1), LatentPartition::halves(2));
  const Tensor batch = Tensor::matrix({{3, 7}, {7, 3}, {3, 3}, {7, 7}});  // mean 5, std 2 per column
  init_actnorm(m, batch);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(std::exp(m.blocks()[0].actnorm_log_scale[j]), 0.5, 1e-15);
    EXPECT_NEAR(m.blocks()[0].actnorm_bias[j], -2.5, 1e-15);
  }
}

TEST(Flow, ActnormOnStandardizedBatchIsNearIdentity) {
  FlowModel m(FlowConfig::small(2, 1), LatentPartition::halves(2));
  init_actnorm(m, Tensor::matrix({{1, -1}, {-1, 1}, {1, 1}, {-1, -1}}));
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(m.blocks()[0].actnorm_log_scale[j], 0.0, 1e-15);
    EXPECT_NEAR(m.blocks()[0].actnorm_bias[j], 0.0, 1e-15);
  }
}

TEST(Flow, ActnormErrors) {
  FlowModel m(FlowConfig::small(2, 1), LatentPartition::halves(2));
  EXPECT_THROW(init_actnorm(m, Tensor::matrix({{1, 2}, {1, 3}, {1, 4}})), DegenerateDataError);
  EXPECT_THROW(init_actnorm(m, Tensor::matrix({{1, 2}})), InsufficientBatchError);
}

TEST(Flow, ForwardBeforeActnormIsStateError) {
  const FlowModel m(FlowConfig::small(4), LatentPartition::halves(4));
  EXPECT_THROW(forward(m, Tensor::zeros({2, 4})), StateError);
}

TEST(Flow, ShapeAndDomainErrors) {
  const FlowModel m = FlowModel::identity(config(4, 1), LatentPartition::halves(4));
  EXPECT_THROW(forward(m, Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(inverse(m, Tensor::zeros({2, 5})), DimensionError);
  Tensor bad = Tensor::zeros({1, 4});
  bad[2] = std::nan("");
  EXPECT_THROW(forward(m, bad), DomainError);
}

TEST(Flow, PartitionValidation) {
  EXPECT_THROW(LatentPartition({0, 2}).validate(4), ConfigError);
  EXPECT_THROW(LatentPartition({3, 2}).validate(4), ConfigError);
  EXPECT_NO_THROW(LatentPartition({1, 3}).validate(4));
}

TEST(Flow, GraphPathMatchesValuePath) {
  const FlowModel m = oracle::random_flow(6, 3, 16, 31);
  std::mt19937_64 rng(32);
  const Tensor e = oracle::random_tensor(9, 6, rng);
  const ForwardResult ref = forward(m, e);
  ad::Graph g;
  BoundFlow bound(m, g, false);
  const BoundFlow::Output out = bound.forward(g.constant(e));
  EXPECT_LT(max_abs(out.z.value(), ref.z), 1e-12);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(out.logdet.value()[i], ref.logdet[i], 1e-12);
}

TEST(Flow, IdentityVolumeNllIsHalfSquaredNorm) {
  const FlowModel m = FlowModel::identity(config(4, 2), LatentPartition::halves(4));
  std::mt19937_64 rng(41);
  const Tensor e = oracle::random_tensor(16, 4, rng);
  double expected = 0;
  for (std::size_t i = 0; i < e.size(); ++i) expected += 0.5 * e[i] * e[i];
  expected /= 16;
  ad::Graph g;
  BoundFlow bound(m, g, false);
  EXPECT_NEAR(losses::nll_loss(bound, g.constant(e)).value().item(), expected, 1e-15);
}

TEST(Flow, NllGradCheckOnTwoBlockFlow) {
  const FlowModel m = oracle::random_flow(4, 2, 8, 51);
  std::mt19937_64 rng(52);
  const Tensor e = oracle::random_tensor(6, 4, rng);
  const double err = oracle::flow_parameter_grad_check(
      m, [&](const BoundFlow& f, ad::Graph& g) { return losses::nll_loss(f, g.constant(e)); });
  EXPECT_LT(err, 1e-4);
  ad::ScalarFunction wrt_input = [&](ad::Graph& g, ad::Var x) {
    BoundFlow f(m, g, false);
    return losses::nll_loss(f, x);
  };
  EXPECT_LT(ad::grad_check(wrt_input, e, 1e-5), 1e-4);
}

TEST(Flow, ParametersNamedAndFixedTensorsFrozen) {
  FlowModel m(FlowConfig::small(4, 2), LatentPartition::halves(4));
  const auto all = m.tensors();
  const auto trainable = m.trainable_tensors();
  EXPECT_LT(trainable.size(), all.size());
  for (const auto& t : trainable) {
    EXPECT_EQ(t.name.find("permutation"), std::string::npos);
    EXPECT_EQ(t.name.find(".sign"), std::string::npos);
  }
}

TEST(Flow, CouplingLogScaleIsClamped) {
  FlowModel m = oracle::random_flow(4, 1, 8, 61, 50.0);
  std::mt19937_64 rng(62);
  const Tensor e = oracle::random_tensor(20, 4, rng, 10.0);
  const ForwardResult r = forward(m, e);
  const FlowBlock& b = m.blocks()[0];
  double fixed = 0;
  for (std::size_t j = 0; j < 4; ++j) fixed += b.actnorm_log_scale[j] + b.log_diag[j];
  const double bound = fixed + 2.0 * 2.0;  // two transformed coordinates, |log-scale| <= clamp
  for (double ld : r.logdet) {
    EXPECT_LE(ld, bound + 1e-12);
    EXPECT_GE(ld, fixed - 4.0 - 1e-12);
  }
}

}  // namespace
