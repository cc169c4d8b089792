#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "fairlatent/checkpoint.hpp"
#include "fairlatent/counterfactual.hpp"
#include "fairlatent/diagnostics.hpp"
#include "fairlatent/errors.hpp"
#include "fairlatent/gradcheck.hpp"
#include "fairlatent/linalg.hpp"
#include "fairlatent/losses.hpp"
#include "fairlatent/seeding.hpp"
#include "run_config.hpp"

namespace fairlatent::cli {

namespace fs = std::filesystem;

namespace {

std::string format(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

KeyValueText train_keys_only(const KeyValueText& text) {
  KeyValueText out;
  const auto& known = TrainConfig::known_keys();
  for (const auto& [k, v] : text.entries())
    if (known.contains(k)) out.set(k, v);
  return out;
}

fs::path default_out_dir(const std::optional<std::string>& out, const std::optional<std::string>& ckpt) {
  if (out) return *out;
  if (ckpt) {
    const fs::path parent = fs::path(*ckpt).parent_path();
    return parent.empty() ? fs::path(".") : parent;
  }
  return ".";
}

void check_width(const TrainState& st, const EmbeddingDataset& data) {
  if (st.model.dim() != data.d()) {
    throw DimensionError("checkpoint expects embeddings of width " + std::to_string(st.model.dim()) +
                         ", dataset has " + std::to_string(data.d()));
  }
}

std::string percent(const Rational& r) { return format("%.4f", 100.0 * r.to_double()); }

}  // namespace

// ---------------------------------------------------------------------------

int run_synth(const SynthOptions& o) {
  KeyValueText text = load_run_config(o.config ? std::optional<fs::path>(*o.config) : std::nullopt);
  SynthConfig c = synth_from_text(text);
  if (o.n) c.n = *o.n;
  if (o.d) c.d = *o.d;
  if (o.attrs) c.attr_count = *o.attrs;
  if (o.rho) c.rho = *o.rho;
  if (o.eval_rho) c.eval_rho = *o.eval_rho;
  if (o.sigma) c.sigma = *o.sigma;
  if (o.signal_y) c.signal_y = *o.signal_y;
  if (o.signal_s) c.signal_s = *o.signal_s;
  if (o.seed) c.seed = *o.seed;
  if (o.map_seed) c.map_seed = *o.map_seed;
  c.validate();

  const EmbeddingDataset data = generate_synthetic(c);
  save_dataset(data, o.out);
  std::printf("n=%zu\nd=%zu\n", data.n(), data.d());
  for (std::size_t a = 0; a < data.attr_count(); ++a)
    std::printf("corr_y_s%zu=%.4f\n", a, label_attribute_correlation(data, a));
  for (Split s : {Split::train, Split::val, Split::test})
    std::printf("%s_rows=%zu\n", to_string(s).c_str(), data.indices(s).size());

  KeyValueText resolved;
  synth_to_text(c, resolved);
  resolved.set("out", o.out);
  write_resolved(o.out + ".config", resolved);
  return 0;
}

// ---------------------------------------------------------------------------

int run_train(const TrainOptions& o) {
  const KeyValueText text = load_run_config(o.config ? std::optional<fs::path>(*o.config) : std::nullopt);
  const std::optional<std::string> data_path = o.data ? o.data : text.find("data");
  if (!data_path) throw ConfigError("train needs --data (or a 'data' key in --config)");
  const fs::path out = o.out ? fs::path(*o.out) : fs::path(text.get_string("out", "run"));

  TrainConfig cfg = TrainConfig::from_text(train_keys_only(text), o.small ? TrainConfig::small_profile() : TrainConfig{});
  if (o.ablation) cfg.flags = AblationFlags::preset(*o.ablation);
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.epochs = *o.epochs;
  cfg.validate();
  const EmbeddingDataset data = load_dataset(*data_path);
  fs::create_directories(out);

  KeyValueText resolved = cfg.to_text();
  resolved.set("data", *data_path);
  resolved.set("out", out.string());
  write_resolved(out / "config.txt", resolved);

  if (o.ablation_grid) {
    std::string csv = "row,eo,dp,wga,acc,diverged\n";
    for (const AblationRow& row : ablation_grid(data, cfg, AblationTable::cumulative)) {
      csv += row.flags.describe() + "," + percent(row.report.eo) + "," + percent(row.report.dp) + "," +
             percent(row.report.wga) + "," + percent(row.report.acc) + "," + (row.outcome.diverged ? "1" : "0") + "\n";
    }
    write_text(out / "ablation.csv", csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
  }

  std::ofstream log(out / "train_log.csv");
  log << "epoch,loss,fair_label,fair_sensitive,nll,cls,val_nll,val_eo_pct,val_dp_pct,val_wga_pct,val_acc_pct,"
         "val_sensitive_acc_pct\n";
  auto on_epoch = [&](const EpochRecord& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%.0f,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch,
                  r.loss, r.fair_label, r.fair_sensitive, r.nll, r.cls, r.val_nll, 100 * r.val_eo, 100 * r.val_dp,
                  100 * r.val_wga, 100 * r.val_acc, 100 * r.val_sensitive_acc);
    log << buf << std::flush;
    std::fputs(buf, stdout);
    std::fflush(stdout);
  };
  const TrainResult result = train(data, cfg, on_epoch);
  save_checkpoint(result.state, out / "model.flck");
  if (result.outcome.diverged) {
    std::fprintf(stderr, "training diverged: %s (checkpoint holds epoch %zu)\n", result.outcome.message.c_str(),
                 result.state.epoch);
    return 1;
  }
  std::printf("checkpoint=%s\n", (out / "model.flck").string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

int run_eval(const EvalOptions& o) {
  const TrainState st = load_checkpoint(o.ckpt);
  const EmbeddingDataset data = load_dataset(o.data);
  check_width(st, data);
  const Split split = parse_split(o.split);
  const Evaluation ev = evaluate(st, data, split);
  std::string text = "split=" + to_string(split) + "\n" + ev.label.to_text("label.") + ev.sensitive.to_text("sensitive.");
  text += "nll=" + format_double(ev.nll) + "\n";
  std::fputs(text.c_str(), stdout);

  const fs::path dir = default_out_dir(o.out, o.ckpt);
  fs::create_directories(dir);
  write_text(dir / ("eval_" + to_string(split) + ".txt"), text);
  KeyValueText resolved;
  resolved.set("ckpt", o.ckpt);
  resolved.set("data", o.data);
  resolved.set("split", to_string(split));
  write_resolved(dir / ("eval_" + to_string(split) + ".config.txt"), resolved);
  return 0;
}

// ---------------------------------------------------------------------------

int run_counterfact(const CounterfactOptions& o) {
  const TrainState st = load_checkpoint(o.ckpt);
  const EmbeddingDataset data = load_dataset(o.data);
  check_width(st, data);
  const Block block = o.dir == "sensitive" ? Block::sensitive : Block::label;
  const Direction dir = direction_from_probe(st, block);
  const std::vector<double> alphas = parse_alpha_grid(o.alpha_grid);
  const Split split = parse_split(o.split);
  const fs::path prefix = o.out;
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());

  KeyValueText resolved;
  resolved.set("ckpt", o.ckpt);
  resolved.set("data", o.data);
  resolved.set("dir", o.dir);
  resolved.set("mode", o.mode);
  resolved.set("alpha_grid", o.alpha_grid);
  resolved.set("split", to_string(split));
  resolved.set("probe_split", o.probe_split);
  resolved.set("n_samples", o.n_samples);
  resolved.set("limit", o.limit);
  resolved.set("seed", static_cast<std::int64_t>(o.seed));
  resolved.set("out", o.out);
  write_resolved(prefix.string() + ".config.txt", resolved);

  if (o.mode == "trajectory") {
    const SplitView v = view(data, split);
    const std::size_t n = std::min(o.limit, v.rows.size());
    if (n == 0) throw UndefinedMetricError("split '" + to_string(split) + "' is empty");
    std::vector<std::size_t> take(n);
    for (std::size_t i = 0; i < n; ++i) take[i] = i;
    const Tensor e = gather_rows(v.e, take);
    const auto traj = trajectory(st, e, dir, alphas);
    const std::vector<int> y(v.y.begin(), v.y.begin() + static_cast<std::ptrdiff_t>(n));
    const std::vector<int> s(v.s.begin(), v.s.begin() + static_cast<std::ptrdiff_t>(n));
    export_trajectory(traj, y, s, prefix);
    std::printf("samples=%zu\nalphas=%zu\nembeddings=%s.fle\ntable=%s.csv\n", n, alphas.size(), prefix.c_str(),
                prefix.c_str());
    return 0;
  }

  const LinearProbe probe = fit_embedding_probe(data, parse_split(o.probe_split));
  if (o.mode == "figure4-left") {
    const auto rows = misclassification_vs_shift(st, data, split, dir, probe, alphas);
    const std::string csv = shift_table_csv(rows, "misclassification");
    write_text(prefix.string() + ".csv", csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
  }
  if (o.mode == "figure4-right") {
    const ShiftRatio r = generative_shift_ratio(st.model, st.config.precision, dir, alphas, o.n_samples, probe, o.seed);
    const std::string csv = shift_table_csv(r.rows, "proportion");
    write_text(prefix.string() + ".csv", csv);
    std::fputs(csv.c_str(), stdout);
    if (r.rows.size() >= 2) {
      KeyValueText fit;
      fit.set("slope", r.fit.slope);
      fit.set("slope_stderr", r.fit.slope_stderr);
      fit.set("intercept", r.fit.intercept);
      write_text(prefix.string() + ".fit.txt", fit.to_string());
      std::printf("slope=%.6g stderr=%.6g intercept=%.6g (percentage points per unit alpha)\n", r.fit.slope,
                  r.fit.slope_stderr, r.fit.intercept);
    }
    return 0;
  }
  throw ConfigError("unknown counterfact mode '" + o.mode + "'");
}

// ---------------------------------------------------------------------------

namespace {

struct Loaded {
  TrainState state;
  EmbeddingDataset data;
};

Loaded require_model(const DiagOptions& o) {
  if (!o.ckpt || !o.data) throw ConfigError("check '" + o.check + "' needs --ckpt and --data");
  Loaded l{load_checkpoint(*o.ckpt), load_dataset(*o.data)};
  check_width(l.state, l.data);
  return l;
}

bool report_check(const std::string& name, bool ok, const std::string& measured, const std::string& threshold) {
  std::printf("%s %s measured=%s threshold=%s\n", ok ? "PASS" : "FAIL", name.c_str(), measured.c_str(),
              threshold.c_str());
  return ok;
}

// Max relative error between reverse-mode and central-difference gradients of
// total_loss over the input batch and every trainable flow tensor.
double total_loss_grad_check(const FlowModel& model, const Tensor& e, const BatchAnnotations& ann,
                             const LinearProbe& py, const LinearProbe& ps, const FairLossConfig& cfg) {
  auto loss = [&](const FlowModel& m, ad::Graph& g, ad::Var x, bool trainable, std::vector<ad::Var>* params) {
    BoundFlow flow(m, g, trainable);
    if (params) *params = flow.parameters();
    const BoundFlow::Output out = flow.forward(x);
    const losses::ProbeVars vy{g.constant(py.weight), g.constant(py.bias)};
    const losses::ProbeVars vs{g.constant(ps.weight), g.constant(ps.bias)};
    return losses::total_loss(out.z, out.logdet, m.partition(), vy, vs, ann, cfg, AblationFlags::full()).total;
  };
  double worst = ad::grad_check([&](ad::Graph& g, ad::Var x) { return loss(model, g, x, false, nullptr); }, e, 1e-5);

  ad::Graph g;
  std::vector<ad::Var> params;
  g.backward(loss(model, g, g.constant(e), true, &params));
  FlowModel probe = model;
  auto tensors = probe.trainable_tensors();
  const double h = 1e-5;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const Tensor analytic = g.grad(params[t]);
    Tensor& p = *tensors[t].tensor;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      auto value = [&](double v) {
        p[i] = v;
        ad::Graph g2;
        return loss(probe, g2, g2.constant(e), false, nullptr).value().item();
      };
      const double numeric = (value(saved + h) - value(saved - h)) / (2 * h);
      p[i] = saved;
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace

int run_diag(const DiagOptions& o) {
  const fs::path dir = default_out_dir(o.out, o.ckpt);
  fs::create_directories(dir);
  KeyValueText resolved;
  resolved.set("check", o.check);
  if (o.ckpt) resolved.set("ckpt", *o.ckpt);
  if (o.data) resolved.set("data", *o.data);
  resolved.set("split", o.split);
  resolved.set("lambda", o.lambda);
  resolved.set("seed", static_cast<std::int64_t>(o.seed));
  if (o.threshold) resolved.set("threshold", *o.threshold);
  write_resolved(dir / ("diag_" + o.check + ".config.txt"), resolved);

  bool ok = false;
  if (o.check == "gradcheck") {
    const double threshold = o.threshold.value_or(1e-4);
    std::mt19937_64 rng(mix_seed(o.seed, 3));
    std::normal_distribution<double> normal(0.0, 1.0);
    FlowModel model;
    Tensor e;
    BatchAnnotations ann;
    FairLossConfig cfg;
    if (o.ckpt) {
      const Loaded l = require_model(o);
      model = l.state.model;
      cfg = l.state.config.loss;
      const SplitView v = view(l.data, Split::train);
      std::vector<std::size_t> take;
      for (std::size_t i = 0; i < std::min<std::size_t>(12, v.rows.size()); ++i) take.push_back(i);
      e = gather_rows(v.e, take);
      for (std::size_t i : take) ann.y.push_back(v.y[i]), ann.s.push_back(v.s[i]);
      ann.y_classes = l.state.label_classes;
      ann.s_classes = l.state.group_classes;
    } else {
      FlowConfig fc = FlowConfig::small(4, o.seed);
      fc.num_blocks = 2;
      fc.hidden_width = 8;
      model = FlowModel(fc, LatentPartition::halves(4));
      e = Tensor::zeros({12, 4});
      for (std::size_t i = 0; i < e.size(); ++i) e[i] = normal(rng);
      init_actnorm(model, e);
      for (std::size_t i = 0; i < 12; ++i) ann.y.push_back(static_cast<int>(i % 2)), ann.s.push_back(static_cast<int>(i / 2 % 2));
    }
    const LatentPartition& part = model.partition();
    const LinearProbe py = LinearProbe::random(part.label_width, ann.y_classes, rng);
    const LinearProbe ps = LinearProbe::random(part.sensitive_width, ann.s_classes, rng);
    const double err = total_loss_grad_check(model, e, ann, py, ps, cfg);
    ok = report_check("gradcheck", err < threshold, format("%.3g", err), format("%.3g", threshold));
  } else if (o.check == "jensen") {
    std::mt19937_64 rng(mix_seed(o.seed, 4));
    std::normal_distribution<double> normal(0.0, 1.0);
    double min_gap = 1e300, max_iso = 0;
    for (int t = 0; t < 1000; ++t) {
      const std::size_t d = 2 + static_cast<std::size_t>(t % 7);
      Tensor a = Tensor::zeros({d, d});
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = normal(rng);
      Tensor c = linalg::matmul(a, linalg::transpose(a));
      for (std::size_t i = 0; i < d; ++i) c.at(i, i) += 1e-3;
      min_gap = std::min(min_gap, diag::jensen_gap(c).gap);
      const Tensor q = linalg::random_orthogonal(d, rng);
      Tensor iso = linalg::matmul(q, linalg::transpose(q));
      for (std::size_t i = 0; i < iso.size(); ++i) iso[i] *= 0.5 + static_cast<double>(t % 10);
      max_iso = std::max(max_iso, std::abs(diag::jensen_gap(iso).gap));
    }
    ok = report_check("jensen", min_gap >= -1e-12 && max_iso < 1e-9,
                      format("min_gap=%.3g", min_gap) + format(",isotropic_gap=%.3g", max_iso),
                      "min_gap>=-1e-12,isotropic_gap<1e-9");
    if (o.ckpt) {
      const Loaded l = require_model(o);
      const Tensor z = forward(l.state.model, view(l.data, parse_split(o.split)).e).z;
      const diag::JensenGap g = diag::jensen_gap(linalg::covariance(label_block(l.state, z)));
      std::printf("latent_zy sum_log_eigen=%.6g bound=%.6g gap=%.6g\n", g.sum_log_eigen, g.bound, g.gap);
    }
  } else if (o.check == "nce") {
    const auto rows = diag::thm2_monotonicity(1.0, diag::default_angle_grid(), 32);
    std::string csv = "angle_deg,distance,i_nce\n";
    bool strictly = true, bounded = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%g,%.10g,%.10g\n", rows[i].angle_deg, rows[i].distance, rows[i].i_nce);
      csv += buf;
      if (i > 0) strictly = strictly && rows[i].i_nce < rows[i - 1].i_nce;
      bounded = bounded && rows[i].i_nce <= std::log(32.0) + 1e-12;
    }
    write_text(dir / "diag_nce.csv", csv);
    std::fputs(csv.c_str(), stdout);
    ok = report_check("nce", strictly && bounded,
                      std::string(strictly ? "strictly_decreasing" : "not_monotone") + (bounded ? ",<=logK" : ",>logK"),
                      "strictly_decreasing,<=logK");
  } else if (o.check == "ib") {
    const Loaded l = require_model(o);
    const SplitView v = view(l.data, parse_split(o.split));
    const Tensor z = forward(l.state.model, v.e).z;
    const double zy = diag::ib_estimate(label_block(l.state, z), v.y, o.lambda);
    const double zs = diag::ib_estimate(sensitive_block(l.state, z), v.y, o.lambda);
    const double threshold = o.threshold.value_or(0.0);
    std::printf("ib_zs=%.6g\n", zs);
    ok = report_check("ib", zy < threshold, format("ib_zy=%.6g", zy), format("<%.6g", threshold));
  } else if (o.check == "norm") {
    const Loaded l = require_model(o);
    const Tensor z = forward(l.state.model, view(l.data, parse_split(o.split)).e).z;
    const diag::NormConcentration r = diag::norm_concentration(label_block(l.state, z), l.state.config.loss.c);
    const double threshold = o.threshold.value_or(0.2);
    std::printf("mean_sq_norm=%.6g target=%.6g\n", r.mean_sq_norm, r.target);
    ok = report_check("norm", r.relative_deviation < threshold, format("%.4f", r.relative_deviation),
                      format("<%.4f", threshold));
  } else {
    throw ConfigError("unknown check '" + o.check + "'");
  }
  return ok ? 0 : 1;
}

}  // namespace fairlatent::cli
