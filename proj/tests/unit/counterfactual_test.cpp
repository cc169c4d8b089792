#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "fairlatent/binary_io.hpp"
#include "fairlatent/counterfactual.hpp"
#include "fairlatent/errors.hpp"

namespace {

using namespace fairlatent;
namespace fs = std::filesystem;

const EmbeddingDataset& data() {
  static const EmbeddingDataset d = [] {
    SynthConfig c;
    c.n = 2000;
    c.d = 8;
    return generate_synthetic(c);
  }();
  return d;
}

TrainConfig tiny(std::size_t epochs, const AblationFlags& flags) {
  TrainConfig c = TrainConfig::small_profile();
  c.epochs = epochs;
  c.num_blocks = 2;
  c.hidden_width = 16;
  c.batch_size = 64;
  c.flags = flags;
  return c;
}

const TrainState& trained() {
  static const TrainState st = train(data(), tiny(2, AblationFlags::full())).state;
  return st;
}

TEST(Direction, Normalizes) {
  const std::vector<double> h{3, 4};
  const Direction d = direction_from_weights(h, 0, 4);
  EXPECT_DOUBLE_EQ(d.unit[0], 0.6);
  EXPECT_DOUBLE_EQ(d.unit[1], 0.8);
  EXPECT_EQ(d.unit[2], 0.0);
  const std::vector<double> unit{0.6, 0.8};
  const Direction same = direction_from_weights(unit, 2, 4, Block::sensitive);
  EXPECT_EQ(same.unit[2], 0.6);
  EXPECT_EQ(same.unit[3], 0.8);
  EXPECT_EQ(same.begin, 2u);
  EXPECT_EQ(same.end, 4u);
  const std::vector<double> zero{0, 0};
  EXPECT_THROW(direction_from_weights(zero, 0, 4), DegenerateDataError);
  EXPECT_THROW(direction_from_weights(h, 3, 4), DimensionError);
}

TEST(Direction, FromProbeIsUnitInsideItsBlock) {
  const TrainState& st = trained();
  for (Block b : {Block::label, Block::sensitive}) {
    const Direction d = direction_from_probe(st, b);
    double norm = 0;
    for (std::size_t j = 0; j < d.unit.size(); ++j) {
      norm += d.unit[j] * d.unit[j];
      if (j < d.begin || j >= d.end) EXPECT_EQ(d.unit[j], 0.0);
    }
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-12);
  }
}

TEST(Shift, Examples) {
  const std::vector<double> e1{1, 0};
  const Direction d = direction_from_weights(e1, 0, 4);
  const Tensor z = Tensor::matrix({{0.5, -1, 2, 3}});
  EXPECT_EQ(max_abs_diff(shift(z, d, 0.0), z), 0.0);
  const Tensor moved = shift(Tensor::zeros({1, 4}), d, 3.0);
  EXPECT_EQ(moved[0], 3.0);
  EXPECT_EQ(moved[1], 0.0);
  const std::vector<double> hs{0.3, -0.9};
  const Direction ds = direction_from_weights(hs, 2, 4, Block::sensitive);
  const Tensor zs = shift(z, ds, 2.5);
  EXPECT_EQ(zs[0], z[0]);
  EXPECT_EQ(zs[1], z[1]);
  EXPECT_NE(zs[2], z[2]);
}

TEST(Trajectory, ZeroAlphaReturnsInput) {
  const TrainState& st = trained();
  const Tensor e = gather_rows(data().e, std::vector<std::size_t>{0, 1, 2});
  const std::vector<double> zero{0.0};
  const auto traj = trajectory(st, e, direction_from_probe(st, Block::label), zero);
  ASSERT_EQ(traj.size(), 1u);
  EXPECT_LT(max_abs_diff(traj[0].e, e), 1e-10);
}

TEST(Trajectory, ProbeMarginIsAffineAlongOwnDirection) {
  const TrainState& st = trained();
  const Tensor e = gather_rows(data().e, std::vector<std::size_t>{3, 4, 5, 6});
  const Direction dir = direction_from_probe(st, Block::label);
  const auto alphas = parse_alpha_grid("-3:3:0.5");
  const auto traj = trajectory(st, e, dir, alphas);
  double hn = 0;
  for (std::size_t k = 0; k < st.label_probe.weight.rows(); ++k) {
    const double h = st.label_probe.weight.at(k, 1) - st.label_probe.weight.at(k, 0);
    hn += h * h;
  }
  hn = std::sqrt(hn);
  const auto& base = traj[6];  // alpha 0
  ASSERT_EQ(base.alpha, 0.0);
  for (const auto& pt : traj) {
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(pt.label_margin[i] - base.label_margin[i], pt.alpha * hn, 1e-10);
      EXPECT_NEAR(pt.sensitive_margin[i], base.sensitive_margin[i], 1e-10);
    }
  }
  for (std::size_t k = 1; k < traj.size(); ++k)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_GE(traj[k].label_margin[i], traj[k - 1].label_margin[i]);
}

TEST(Trajectory, SensitiveShiftLeavesLabelMargin) {
  const TrainState& st = trained();
  const Tensor e = gather_rows(data().e, std::vector<std::size_t>{7, 8});
  const std::vector<double> alphas{-2.0, 0.0, 2.0};
  const auto traj = trajectory(st, e, direction_from_probe(st, Block::sensitive), alphas);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(traj[0].label_margin[i], traj[1].label_margin[i], 1e-10);
    EXPECT_NE(traj[0].sensitive_margin[i], traj[2].sensitive_margin[i]);
  }
}

TEST(Trajectory, ReencodingReproducesShiftedLatents) {
  const TrainState& st = trained();
  const Tensor e = view(data(), Split::test).e;
  const auto alphas = parse_alpha_grid("-6:6:1");
  const auto traj = trajectory(st, e, direction_from_probe(st, Block::label), alphas);
  for (const auto& pt : traj) {
    ASSERT_TRUE(pt.e.all_finite()) << "alpha " << pt.alpha;
    EXPECT_LT(max_abs_diff(forward(st.model, pt.e).z, pt.z), 1e-9) << "alpha " << pt.alpha;
  }
}

TEST(Trajectory, ExportWritesFleAndCsv) {
  const TrainState& st = trained();
  const Tensor e = gather_rows(data().e, std::vector<std::size_t>{0});
  const auto traj = trajectory(st, e, direction_from_probe(st, Block::label), default_alpha_grid());
  const fs::path prefix = fs::temp_directory_path() / ("fairlatent_traj_" + std::to_string(::getpid()));
  const std::vector<int> y{1}, s{0};
  export_trajectory(traj, y, s, prefix);
  const auto bytes = io::read_file(prefix.string() + ".fle");
  io::ByteReader r(bytes);
  EXPECT_EQ(r.text(4), "FLE1");
  r.u32();
  EXPECT_EQ(r.u64(), 5u);
  EXPECT_EQ(bytes.back(), 2);
  const auto csv = io::read_file(prefix.string() + ".csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  fs::remove(prefix.string() + ".fle");
  fs::remove(prefix.string() + ".csv");
}

TEST(AlphaGrid, Parsing) {
  EXPECT_EQ(default_alpha_grid(), (std::vector<double>{-3, -1.5, 0, 1.5, 3}));
  EXPECT_EQ(parse_alpha_grid("0"), (std::vector<double>{0}));
  EXPECT_EQ(parse_alpha_grid("-3:3:1").size(), 7u);
  EXPECT_EQ(parse_alpha_grid("-1, 0.5,2"), (std::vector<double>{-1, 0.5, 2}));
  EXPECT_THROW(parse_alpha_grid("a,b"), ConfigError);
  EXPECT_THROW(parse_alpha_grid("1:0:1"), ConfigError);
}

TEST(Linfit, Examples) {
  const std::vector<double> x{0, 1, 2}, y{0, 2, 4};
  const LinearFit f = linfit(x, y);
  EXPECT_NEAR(f.slope, 2.0, 1e-15);
  EXPECT_NEAR(f.intercept, 0.0, 1e-15);
  EXPECT_NEAR(f.slope_stderr, 0.0, 1e-15);
  const std::vector<double> flat{5, 5, 5};
  EXPECT_EQ(linfit(x, flat).slope, 0.0);
  const std::vector<double> one{1};
  EXPECT_THROW(linfit(one, one), ContractError);
  const std::vector<double> same{2, 2, 2};
  EXPECT_THROW(linfit(same, y), DegenerateDataError);
  const std::vector<double> x2{0, 1}, y2{1, 3};
  EXPECT_TRUE(std::isnan(linfit(x2, y2).slope_stderr));
}

TEST(Linfit, StandardErrorMatchesClosedForm) {
  const std::vector<double> x{0, 1, 2, 3}, y{1, 2, 2, 4};
  const LinearFit f = linfit(x, y);
  // slope 0.9, intercept 0.9, residuals (0.1, 0.2, -0.7, 0.4): SSE 0.7, Sxx 5.
  EXPECT_NEAR(f.slope, 0.9, 1e-14);
  EXPECT_NEAR(f.intercept, 0.9, 1e-14);
  EXPECT_NEAR(f.slope_stderr, std::sqrt(0.7 / 2 / 5), 1e-14);
}

TEST(MisclassificationVsShift, ZeroAlphaIsBaselineError) {
  const TrainState& st = trained();
  const LinearProbe probe = fit_embedding_probe(data(), Split::val);
  const std::vector<double> zero{0.0};
  const auto rows = misclassification_vs_shift(st, data(), Split::test, direction_from_probe(st, Block::label), probe, zero);
  const SplitView v = view(data(), Split::test);
  const auto pred = probe.predict(v.e);
  double wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != v.s[i];
  EXPECT_NEAR(rows[0].value, wrong / static_cast<double>(pred.size()), 1e-12);
}

double rate_range(const std::vector<ShiftRow>& rows) {
  double lo = 1, hi = 0;
  for (const auto& r : rows) lo = std::min(lo, r.value), hi = std::max(hi, r.value);
  return hi - lo;
}

TEST(MisclassificationVsShift, FairTrainingFlattensLeakage) {
  const EmbeddingDataset& d = data();
  const LinearProbe probe = fit_embedding_probe(d, Split::val);
  const auto alphas = parse_alpha_grid("-3:3:1");

  // Untrained flow with a label probe fit on its (entangled) Z^Y.
  TrainState untrained = init_training(d, tiny(1, AblationFlags::full()));
  const SplitView tr = view(d, Split::train);
  untrained.label_probe = fit_probe(label_block(untrained, forward(untrained.model, tr.e).z), tr.y, 2);
  const auto before = misclassification_vs_shift(untrained, d, Split::test,
                                                 direction_from_probe(untrained, Block::label), probe, alphas);
  EXPECT_GT(rate_range(before), 0.05);

  const TrainState fair = train(d, tiny(15, AblationFlags::full())).state;
  const auto after = misclassification_vs_shift(fair, d, Split::test, direction_from_probe(fair, Block::label), probe, alphas);
  EXPECT_LT(rate_range(after), rate_range(before));
}

TEST(GenerativeShift, OrthogonalDirectionHasNoSlope) {
  const FlowModel id = FlowModel::identity(FlowConfig::small(8), LatentPartition::halves(8));
  LinearProbe probe;
  probe.weight = Tensor::zeros({8, 2});
  probe.bias = Tensor::zeros({1, 2});
  probe.weight.at(0, 1) = 1.0;
  probe.weight.at(1, 1) = -0.5;
  const std::vector<double> h{1.0};
  const Direction dir = direction_from_weights(h, 6, 8, Block::sensitive);
  const auto alphas = parse_alpha_grid("-3:3:1");
  const ShiftRatio r = generative_shift_ratio(id, Precision::f64, dir, alphas, 1000, probe, 99);
  EXPECT_LT(std::abs(r.fit.slope), 2.0 * r.fit.slope_stderr);
  for (const auto& row : r.rows) {
    EXPECT_GE(row.value, 0.0);
    EXPECT_LE(row.value, 1.0);
  }
  const std::vector<double> h_used{1.0};
  const Direction aligned = direction_from_weights(h_used, 0, 8);
  EXPECT_GT(generative_shift_ratio(id, Precision::f64, aligned, alphas, 1000, probe, 99).fit.slope, 5.0);
}

TEST(GenerativeShift, CsvTable) {
  const std::vector<ShiftRow> rows{{-1, 0.25}, {1, 0.75}};
  EXPECT_EQ(shift_table_csv(rows, "proportion"), "alpha,proportion\n-1,0.250000\n1,0.750000\n");
}

}  // namespace
