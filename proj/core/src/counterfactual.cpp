#include "fairlatent/counterfactual.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fairlatent/binary_io.hpp"
#include "fairlatent/errors.hpp"
#include "fairlatent/seeding.hpp"

namespace fairlatent {

Direction direction_from_weights(std::span<const double> h, std::size_t begin, std::size_t dim, Block block) {
  if (begin + h.size() > dim) throw DimensionError("direction does not fit in the latent width");
  double norm = 0.0;
  for (double v : h) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw DegenerateDataError("probe direction is the zero vector");
  Direction d{block, begin, begin + h.size(), Tensor::zeros({1, dim})};
  for (std::size_t i = 0; i < h.size(); ++i) d.unit[begin + i] = h[i] / norm;
  return d;
}

Direction direction_from_probe(const TrainState& state, Block block, int positive, int negative) {
  const LinearProbe& p = block == Block::label ? state.label_probe : state.sensitive_probe;
  const auto classes = static_cast<int>(p.classes());
  if (positive < 0 || positive >= classes || negative < 0 || negative >= classes || positive == negative)
    throw ContractError("invalid class pair for probe direction");
  std::vector<double> h(p.input_width());
  for (std::size_t i = 0; i < h.size(); ++i)
    h[i] = p.weight.at(i, static_cast<std::size_t>(positive)) - p.weight.at(i, static_cast<std::size_t>(negative));
  std::size_t begin = 0;
  if (state.config.flags.use_decompose) {
    const auto& part = state.model.partition();
    begin = block == Block::label ? part.label_begin() : part.sensitive_begin();
  }
  return direction_from_weights(h, begin, state.model.dim(), block);
}

Tensor shift(const Tensor& z, const Direction& dir, double alpha) {
  if (z.cols() != dir.unit.cols()) throw DimensionError("shift: latent width does not match direction");
  Tensor out = z;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = dir.begin; j < dir.end; ++j) out.at(i, j) += alpha * dir.unit[j];
  return out;
}

namespace {

std::vector<double> margins(const LinearProbe& p, const Tensor& x, int positive = 1, int negative = 0) {
  const Tensor l = p.logits(x);
  std::vector<double> out(l.rows());
  for (std::size_t i = 0; i < l.rows(); ++i)
    out[i] = l.at(i, static_cast<std::size_t>(positive)) - l.at(i, static_cast<std::size_t>(negative));
  return out;
}

}  // namespace

CounterfactualTrajectory trajectory(const TrainState& state, const Tensor& e, const Direction& dir,
                                    std::span<const double> alphas) {
  const Tensor z = forward(state.model, e, state.config.precision).z;
  CounterfactualTrajectory out;
  for (double a : alphas) {
    TrajectoryPoint pt{a, shift(z, dir, a), {}, {}, {}};
    pt.e = inverse(state.model, pt.z, state.config.precision);
    pt.label_margin = margins(state.label_probe, label_block(state, pt.z));
    pt.sensitive_margin = margins(state.sensitive_probe, sensitive_block(state, pt.z));
    out.push_back(std::move(pt));
  }
  return out;
}

std::vector<double> default_alpha_grid() { return {-3.0, -1.5, 0.0, 1.5, 3.0}; }

std::vector<double> parse_alpha_grid(const std::string& text) {
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("bad");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("alpha grid: '" + s + "' is not a number");
    }
  };
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream in(text);
    for (std::string p; std::getline(in, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw ConfigError("alpha grid range must be lo:hi:step");
    const double lo = number(parts[0]), hi = number(parts[1]), step = number(parts[2]);
    if (!(step > 0) || hi < lo) throw ConfigError("alpha grid range needs step > 0 and hi >= lo");
    const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    if (count > 100000) throw ConfigError("alpha grid too large");
    for (std::size_t i = 0; i < count; ++i) out.push_back(lo + static_cast<double>(i) * step);
    return out;
  }
  std::stringstream in(text);
  for (std::string p; std::getline(in, p, ',');) out.push_back(number(p));
  if (out.empty()) throw ConfigError("alpha grid is empty");
  return out;
}

LinearFit linfit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("linfit: x and y differ in length");
  const std::size_t n = x.size();
  if (n < 2) throw ContractError("linfit needs at least two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0) throw DegenerateDataError("linfit: all x values are equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (n == 2) {
    f.slope_stderr = std::numeric_limits<double>::quiet_NaN();
  } else {
    double ssr = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - (f.intercept + f.slope * x[i]);
      ssr += r * r;
    }
    f.slope_stderr = std::sqrt(ssr / static_cast<double>(n - 2) / sxx);
  }
  return f;
}

std::vector<ShiftRow> misclassification_vs_shift(const TrainState& state, const EmbeddingDataset& data, Split split,
                                                 const Direction& dir, const LinearProbe& embedding_probe,
                                                 std::span<const double> alphas) {
  const SplitView v = view(data, split);
  if (v.rows.empty()) throw UndefinedMetricError("split '" + to_string(split) + "' is empty");
  const Tensor z = forward(state.model, v.e, state.config.precision).z;
  std::vector<ShiftRow> out;
  for (double a : alphas) {
    const Tensor e = inverse(state.model, shift(z, dir, a), state.config.precision);
    const auto pred = embedding_probe.predict(e);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != v.s[i] ? 1 : 0;
    out.push_back({a, static_cast<double>(wrong) / static_cast<double>(pred.size())});
  }
  return out;
}

ShiftRatio generative_shift_ratio(const FlowModel& model, Precision precision, const Direction& dir,
                                  std::span<const double> alphas, std::size_t n_samples,
                                  const LinearProbe& embedding_probe, std::uint64_t seed, int positive) {
  if (n_samples == 0) throw ContractError("generative_shift_ratio needs n_samples >= 1");
  const std::size_t d = model.dim();
  ShiftRatio out;
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    std::mt19937_64 rng(mix_seed(seed, k));
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor z = Tensor::zeros({n_samples, d});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = normal(rng);
    const Tensor e = inverse(model, shift(z, dir, alphas[k]), precision);
    const auto pred = embedding_probe.predict(e);
    std::size_t hits = 0;
    for (int p : pred) hits += p == positive ? 1 : 0;
    const double share = static_cast<double>(hits) / static_cast<double>(n_samples);
    out.rows.push_back({alphas[k], share});
    xs.push_back(alphas[k]);
    ys.push_back(100.0 * share);
  }
  if (xs.size() >= 2) out.fit = linfit(xs, ys);
  return out;
}

LinearProbe fit_embedding_probe(const EmbeddingDataset& data, Split split) {
  const SplitView v = view(data, split);
  if (v.rows.empty()) throw UndefinedMetricError("split '" + to_string(split) + "' is empty");
  return fit_probe(v.e, v.s, data.group_count());
}

std::string shift_table_csv(const std::vector<ShiftRow>& rows, const char* value_name) {
  std::string out = std::string("alpha,") + value_name + "\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6g,%.6f\n", r.alpha, r.value);
    out += buf;
  }
  return out;
}

void export_trajectory(const CounterfactualTrajectory& traj, std::span<const int> y, std::span<const int> s,
                       const std::filesystem::path& prefix) {
  if (traj.empty()) throw ContractError("empty trajectory");
  const std::size_t n = traj.front().e.rows(), d = traj.front().e.cols();
  if (y.size() != n || s.size() != n) throw DimensionError("export_trajectory: annotation count mismatch");
  EmbeddingDataset out;
  out.e = Tensor::zeros({n * traj.size(), d});
  out.attrs.assign(1, {});
  std::string csv = "sample,alpha,label_margin,sensitive_margin\n";
  char buf[128];
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const auto& pt = traj[k];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) out.e.at(k * n + i, j) = pt.e.at(i, j);
      out.y.push_back(y[i]);
      out.attrs[0].push_back(s[i]);
      out.split.push_back(Split::test);
      std::snprintf(buf, sizeof buf, "%zu,%.6g,%.10g,%.10g\n", i, pt.alpha, pt.label_margin[i], pt.sensitive_margin[i]);
      csv += buf;
    }
  }
  // FLE1 stores float32; round here so validation sees what the file holds.
  for (std::size_t i = 0; i < out.e.size(); ++i) out.e[i] = static_cast<double>(static_cast<float>(out.e[i]));
  io::write_file(std::filesystem::path(prefix.string() + ".fle"), encode_dataset(out, false));
  io::write_file(std::filesystem::path(prefix.string() + ".csv"),
                 std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
}

}  // namespace fairlatent
