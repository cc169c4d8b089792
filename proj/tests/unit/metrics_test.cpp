#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fairlatent/errors.hpp"
#include "fairlatent/metrics.hpp"
#include "oracles.hpp"

namespace {

using namespace fairlatent;

// Adds `count` samples with the given (predicted, truth, group).
void add(PredictionSet& p, int pred, int truth, int group, int count) {
  for (int i = 0; i < count; ++i) {
    p.predicted.push_back(pred);
    p.truth.push_back(truth);
    p.group.push_back(group);
  }
}

PredictionSet random_set(std::mt19937_64& rng, int groups, std::size_t n) {
  PredictionSet p;
  p.num_groups = groups;
  for (int y = 0; y < 2; ++y)
    for (int g = 0; g < groups; ++g) add(p, static_cast<int>(rng() % 2), y, g, 1);  // every cell nonempty
  std::uniform_real_distribution<double> u(0, 1);
  const double flip = 0.1 + 0.4 * u(rng);
  while (p.size() < n) {
    const int y = static_cast<int>(rng() % 2);
    const int g = static_cast<int>(rng() % static_cast<unsigned>(groups));
    const double group_noise = flip * (1.0 + 0.5 * g) / (1.0 + 0.5 * groups);
    add(p, u(rng) < group_noise ? 1 - y : y, y, g, 1);
  }
  return p;
}

TEST(Metrics, PerfectClassifier) {
  PredictionSet p;
  add(p, 0, 0, 0, 3);
  add(p, 1, 1, 0, 2);
  add(p, 0, 0, 1, 4);
  add(p, 1, 1, 1, 5);
  EXPECT_EQ(eo_exact(p).to_string(), "0");
  EXPECT_EQ(dp_exact(p).to_string(), "7/45");  // 2/5 vs 5/9: base rates differ
  EXPECT_EQ(wga_exact(p).to_string(), "1");
  EXPECT_EQ(accuracy_exact(p).to_string(), "1");
}

TEST(Metrics, PerfectClassifierWithEqualBaseRatesReportsZeroOneOne) {
  PredictionSet p;
  for (int g = 0; g < 2; ++g) {
    add(p, 0, 0, g, 5);
    add(p, 1, 1, g, 5);
  }
  const FairnessReport r = report(p);
  EXPECT_EQ(r.eo.to_double(), 0.0);
  EXPECT_EQ(r.dp.to_double(), 0.0);
  EXPECT_EQ(r.wga.to_double(), 1.0);
  EXPECT_EQ(r.acc.to_double(), 1.0);
}

TEST(Metrics, EoHalfFromRecallGaps) {
  PredictionSet p;
  add(p, 0, 0, 1, 4);  // group 1 recalls (1, 1)
  add(p, 1, 1, 1, 4);
  add(p, 0, 0, 0, 2);  // group 0 recalls (0.5, 0.5)
  add(p, 1, 0, 0, 2);
  add(p, 1, 1, 0, 3);
  add(p, 0, 1, 0, 3);
  EXPECT_EQ(eo_exact(p).to_string(), "1/2");
  EXPECT_EQ(eo_exact(p, EoReduction::sum).to_string(), "1");
}

TEST(Metrics, IdenticalDistributionsGiveZeroEo) {
  PredictionSet p;
  for (int g = 0; g < 2; ++g) {
    add(p, 0, 0, g, 7);
    add(p, 1, 0, g, 3);
    add(p, 1, 1, g, 6);
    add(p, 0, 1, g, 2);
  }
  EXPECT_EQ(eo_exact(p).to_string(), "0");
  EXPECT_EQ(dp_exact(p).to_string(), "0");
}

TEST(Metrics, DpExamples) {
  PredictionSet all_positive;
  add(all_positive, 1, 0, 0, 3);
  add(all_positive, 1, 1, 1, 3);
  EXPECT_EQ(dp_exact(all_positive).to_string(), "0");

  PredictionSet rates;
  add(rates, 1, 1, 0, 8);
  add(rates, 0, 0, 0, 2);
  add(rates, 1, 1, 1, 3);
  add(rates, 0, 0, 1, 7);
  EXPECT_EQ(dp_exact(rates).to_string(), "1/2");

  PredictionSet single;
  add(single, 1, 1, 0, 3);
  add(single, 0, 0, 0, 3);
  EXPECT_THROW(dp_exact(single), UndefinedMetricError);
  EXPECT_THROW(eo_exact(single), UndefinedMetricError);
}

TEST(Metrics, WgaExamples) {
  PredictionSet p;
  add(p, 0, 0, 0, 9);
  add(p, 1, 0, 0, 1);  // 0.9
  add(p, 1, 1, 0, 7);
  add(p, 0, 1, 0, 3);  // 0.7
  add(p, 0, 0, 1, 8);
  add(p, 1, 0, 1, 2);  // 0.8
  add(p, 1, 1, 1, 6);
  add(p, 0, 1, 1, 4);  // 0.6
  EXPECT_EQ(wga_exact(p).to_string(), "3/5");

  PredictionSet miss;
  add(miss, 1, 0, 0, 4);
  add(miss, 1, 1, 0, 4);
  add(miss, 0, 0, 1, 4);
  add(miss, 1, 1, 1, 4);
  EXPECT_EQ(wga_exact(miss).to_string(), "0");
}

TEST(Metrics, EmptyCellIsUndefined) {
  PredictionSet p;
  add(p, 0, 0, 0, 3);
  add(p, 1, 1, 0, 3);
  add(p, 0, 0, 1, 3);
  EXPECT_THROW(wga_exact(p), UndefinedMetricError);
  EXPECT_THROW(eo_exact(p), UndefinedMetricError);
  EXPECT_THROW(report(p), UndefinedMetricError);
}

TEST(Metrics, ValidationErrors) {
  PredictionSet empty;
  EXPECT_THROW(empty.validate(), ContractError);
  PredictionSet mismatched;
  mismatched.predicted = {0, 1};
  mismatched.truth = {0};
  mismatched.group = {0};
  EXPECT_THROW(mismatched.validate(), ContractError);
  PredictionSet range;
  add(range, 0, 0, 5, 1);
  EXPECT_THROW(range.validate(), ContractError);
}

TEST(Metrics, MatchesBruteForceOracleOnRandomSets) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 100; ++t) {
    const int groups = t % 2 == 0 ? 2 : 4;
    const PredictionSet p = random_set(rng, groups, 40 + rng() % 200);
    const oracle::ExactReport ref = oracle::brute_force_report(p);
    EXPECT_EQ(eo_exact(p).to_string(), ref.eo) << "set " << t;
    EXPECT_EQ(dp_exact(p).to_string(), ref.dp) << "set " << t;
    EXPECT_EQ(wga_exact(p).to_string(), ref.wga) << "set " << t;
    EXPECT_EQ(accuracy_exact(p).to_string(), ref.acc) << "set " << t;
  }
}

TEST(Metrics, FourGroupsUseMaxOverPairs) {
  PredictionSet p;
  const int positives[4] = {5, 6, 2, 9};  // out of 10 per group, all truth = prediction
  for (int g = 0; g < 4; ++g) {
    add(p, 1, 1, g, positives[g]);
    add(p, 0, 0, g, 10 - positives[g]);
  }
  p.num_groups = 4;
  EXPECT_EQ(dp_exact(p).to_string(), "7/10");
  EXPECT_EQ(oracle::brute_force_report(p).dp, "7/10");
}

TEST(Metrics, PermutationInvariance) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 10; ++t) {
    const PredictionSet p = random_set(rng, 4, 120);
    std::vector<std::size_t> perm(p.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    PredictionSet q = p;
    for (std::size_t i = 0; i < p.size(); ++i) {
      q.predicted[i] = p.predicted[perm[i]];
      q.truth[i] = p.truth[perm[i]];
      q.group[i] = p.group[perm[i]];
    }
    EXPECT_EQ(eo_exact(p), eo_exact(q));
    EXPECT_EQ(dp_exact(p), dp_exact(q));
    EXPECT_EQ(wga_exact(p), wga_exact(q));
    EXPECT_EQ(accuracy_exact(p), accuracy_exact(q));
  }
}

TEST(Metrics, ProductDistributionsAreFair) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 10; ++t) {
    // Same (pred, truth) counts replicated in every group, with group sizes scaled.
    int counts[2][2];
    for (auto& row : counts)
      for (int& c : row) c = 1 + static_cast<int>(rng() % 9);
    PredictionSet p;
    p.num_groups = 3;
    for (int g = 0; g < 3; ++g)
      for (int pred = 0; pred < 2; ++pred)
        for (int y = 0; y < 2; ++y) add(p, pred, y, g, counts[pred][y] * (g + 1));
    EXPECT_EQ(eo_exact(p).to_string(), "0");
    EXPECT_EQ(dp_exact(p).to_string(), "0");
  }
}

TEST(Metrics, ReportInvariantsAndText) {
  std::mt19937_64 rng(10);
  const PredictionSet p = random_set(rng, 2, 300);
  const FairnessReport r = report(p);
  EXPECT_FALSE(r.acc < r.wga);
  EXPECT_EQ(r.per_group.size(), 4u);
  const std::string text = r.to_text("label.");
  EXPECT_NE(text.find("label.eo="), std::string::npos);
  EXPECT_NE(text.find("label.eo_exact=" + r.eo.to_string()), std::string::npos);
  EXPECT_NE(text.find("label.wga="), std::string::npos);
}

TEST(Rational, ArithmeticIsReduced) {
  const Rational a(6, 8), b(1, 4);
  EXPECT_EQ(a.to_string(), "3/4");
  EXPECT_EQ((a + b).to_string(), "1");
  EXPECT_EQ((b - a).to_string(), "-1/2");
  EXPECT_EQ((b - a).abs().to_string(), "1/2");
  EXPECT_EQ((a * b).to_string(), "3/16");
  EXPECT_EQ((a / b).to_string(), "3");
  EXPECT_TRUE(b < a);
  EXPECT_EQ(Rational(3, -6).to_string(), "-1/2");
}

}  // namespace
