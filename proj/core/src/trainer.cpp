#include "fairlatent/trainer.hpp"

#include <cmath>

#include "fairlatent/errors.hpp"
#include "fairlatent/seeding.hpp"

namespace fairlatent {

TrainConfig TrainConfig::small_profile() {
  TrainConfig c;
  c.epochs = 30;
  c.num_blocks = 4;
  c.hidden_width = 64;
  c.probe_lr = 1e-3;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(flow_lr > 0) || !(probe_lr > 0)) throw ConfigError("learning rates must be positive");
  if (flow_weight_decay < 0 || probe_weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (num_blocks < 1 || hidden_width < 1) throw ConfigError("flow needs >= 1 block and hidden width >= 1");
  if (!(clamp > 0)) throw ConfigError("clamp must be positive");
  loss.validate();
}

FlowConfig TrainConfig::flow_config(std::size_t dim) const {
  FlowConfig f;
  f.dim = dim;
  f.num_blocks = num_blocks;
  f.subnet_depth = subnet_depth;
  f.hidden_width = hidden_width;
  f.clamp = clamp;
  f.seed = mix_seed(seed, 10);
  return f;
}

LatentPartition TrainConfig::partition(std::size_t dim) const {
  LatentPartition p{label_width == 0 ? dim / 2 : label_width, sensitive_width == 0 ? dim / 2 : sensitive_width};
  p.validate(dim);
  return p;
}

const std::set<std::string, std::less<>>& TrainConfig::known_keys() {
  static const std::set<std::string, std::less<>> keys = {
      "epochs",    "batch_size",  "flow_lr",       "flow_weight_decay", "probe_lr",     "probe_weight_decay",
      "beta1",     "beta2",       "adam_eps",      "lambda_dg",         "lambda_eq",    "lambda_di",
      "lambda_cls", "c",          "eps_eq",        "eps_d",             "ablation",     "use_dg",
      "use_eq",    "use_di",      "use_g",         "use_decompose",     "seed",         "precision",
      "num_blocks", "subnet_depth", "hidden_width", "clamp",            "label_width",  "sensitive_width",
      "select_best", "baseline_accuracy"};
  return keys;
}

KeyValueText TrainConfig::to_text() const {
  KeyValueText t;
  t.set("epochs", epochs);
  t.set("batch_size", batch_size);
  t.set("flow_lr", flow_lr);
  t.set("flow_weight_decay", flow_weight_decay);
  t.set("probe_lr", probe_lr);
  t.set("probe_weight_decay", probe_weight_decay);
  t.set("beta1", beta1);
  t.set("beta2", beta2);
  t.set("adam_eps", adam_eps);
  t.set("lambda_dg", loss.lambda_dg);
  t.set("lambda_eq", loss.lambda_eq);
  t.set("lambda_di", loss.lambda_di);
  t.set("lambda_cls", loss.lambda_cls);
  t.set("c", loss.c);
  t.set("eps_eq", loss.eps_eq);
  t.set("eps_d", loss.eps_d);
  t.set("use_dg", flags.use_dg);
  t.set("use_eq", flags.use_eq);
  t.set("use_di", flags.use_di);
  t.set("use_g", flags.use_g);
  t.set("use_decompose", flags.use_decompose);
  t.set("seed", static_cast<std::int64_t>(seed));
  t.set("precision", to_string(precision));
  t.set("num_blocks", num_blocks);
  t.set("subnet_depth", subnet_depth);
  t.set("hidden_width", hidden_width);
  t.set("clamp", clamp);
  t.set("label_width", label_width);
  t.set("sensitive_width", sensitive_width);
  t.set("select_best", select_best);
  t.set("baseline_accuracy", baseline_accuracy);
  return t;
}

TrainConfig TrainConfig::from_text(const KeyValueText& t, const TrainConfig& base) {
  t.require_known(known_keys());
  TrainConfig c = base;
  auto size = [&](const char* key, std::size_t fallback) {
    const auto v = t.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string("config key '") + key + "' must be nonnegative");
    return static_cast<std::size_t>(v);
  };
  c.epochs = size("epochs", c.epochs);
  c.batch_size = size("batch_size", c.batch_size);
  c.flow_lr = t.get_double("flow_lr", c.flow_lr);
  c.flow_weight_decay = t.get_double("flow_weight_decay", c.flow_weight_decay);
  c.probe_lr = t.get_double("probe_lr", c.probe_lr);
  c.probe_weight_decay = t.get_double("probe_weight_decay", c.probe_weight_decay);
  c.beta1 = t.get_double("beta1", c.beta1);
  c.beta2 = t.get_double("beta2", c.beta2);
  c.adam_eps = t.get_double("adam_eps", c.adam_eps);
  c.loss.lambda_dg = t.get_double("lambda_dg", c.loss.lambda_dg);
  c.loss.lambda_eq = t.get_double("lambda_eq", c.loss.lambda_eq);
  c.loss.lambda_di = t.get_double("lambda_di", c.loss.lambda_di);
  c.loss.lambda_cls = t.get_double("lambda_cls", c.loss.lambda_cls);
  c.loss.c = t.get_double("c", c.loss.c);
  c.loss.eps_eq = t.get_double("eps_eq", c.loss.eps_eq);
  c.loss.eps_d = t.get_double("eps_d", c.loss.eps_d);
  if (auto preset = t.find("ablation")) c.flags = AblationFlags::preset(*preset);
  c.flags.use_dg = t.get_bool("use_dg", c.flags.use_dg);
  c.flags.use_eq = t.get_bool("use_eq", c.flags.use_eq);
  c.flags.use_di = t.get_bool("use_di", c.flags.use_di);
  c.flags.use_g = t.get_bool("use_g", c.flags.use_g);
  c.flags.use_decompose = t.get_bool("use_decompose", c.flags.use_decompose);
  c.seed = static_cast<std::uint64_t>(t.get_int("seed", static_cast<std::int64_t>(c.seed)));
  if (auto p = t.find("precision")) c.precision = parse_precision(*p);
  c.num_blocks = size("num_blocks", c.num_blocks);
  c.subnet_depth = size("subnet_depth", c.subnet_depth);
  c.hidden_width = size("hidden_width", c.hidden_width);
  c.clamp = t.get_double("clamp", c.clamp);
  c.label_width = size("label_width", c.label_width);
  c.sensitive_width = size("sensitive_width", c.sensitive_width);
  c.select_best = t.get_bool("select_best", c.select_best);
  c.baseline_accuracy = t.get_double("baseline_accuracy", c.baseline_accuracy);
  c.validate();
  return c;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               double weight_decay, double beta1, double beta2, double eps) {
  if (params.size() != grads.size()) throw ContractError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros(p->shape()));
      state.v.push_back(Tensor::zeros(p->shape()));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    if (!p.same_shape(g)) throw DimensionError("adam_step: gradient shape mismatch for parameter " + std::to_string(k));
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] -= lr * weight_decay * p[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

const char* const EpochRecord::kColumnNames[EpochRecord::kColumns] = {
    "epoch", "loss", "fair_label", "fair_sensitive", "nll", "cls",
    "val_nll", "val_eo", "val_dp", "val_wga", "val_acc", "val_sensitive_acc"};

std::vector<double> EpochRecord::to_row() const {
  return {epoch, loss, fair_label, fair_sensitive, nll, cls, val_nll, val_eo, val_dp, val_wga, val_acc, val_sensitive_acc};
}

EpochRecord EpochRecord::from_row(std::span<const double> r) {
  if (r.size() != kColumns) throw DimensionError("history row has the wrong width");
  return {r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8], r[9], r[10], r[11]};
}

Tensor label_block(const TrainState& state, const Tensor& z) {
  if (!state.config.flags.use_decompose) return z;
  const auto& p = state.model.partition();
  return slice_columns(z, p.label_begin(), p.label_end());
}

Tensor sensitive_block(const TrainState& state, const Tensor& z) {
  if (!state.config.flags.use_decompose) return z;
  const auto& p = state.model.partition();
  return slice_columns(z, p.sensitive_begin(), p.sensitive_end());
}

namespace {

void round_to_float(Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(static_cast<float>(t[i]));
}

std::vector<Tensor*> flow_parameters(TrainState& s) {
  std::vector<Tensor*> out;
  for (auto& nt : s.model.trainable_tensors()) out.push_back(nt.tensor);
  return out;
}

std::vector<Tensor*> probe_parameters(TrainState& s) {
  return {&s.label_probe.weight, &s.label_probe.bias, &s.sensitive_probe.weight, &s.sensitive_probe.bias};
}

struct BatchTerms {
  double loss, fair_label, fair_sensitive, nll, cls;
};

BatchTerms train_batch(TrainState& st, const Tensor& e, const BatchAnnotations& ann) {
  const TrainConfig& cfg = st.config;
  ad::Graph g;
  BoundFlow flow(st.model, g, true);
  const losses::ProbeVars label{g.variable(st.label_probe.weight), g.variable(st.label_probe.bias)};
  const losses::ProbeVars sens{g.variable(st.sensitive_probe.weight), g.variable(st.sensitive_probe.bias)};
  const auto out = flow.forward(g.constant(e));
  const auto terms =
      losses::total_loss(out.z, out.logdet, st.model.partition(), label, sens, ann, cfg.loss, cfg.flags);
  const double loss = terms.total.value().item();
  if (!std::isfinite(loss)) throw DivergenceError("non-finite training loss");
  g.backward(terms.total);

  std::vector<Tensor> flow_grads;
  for (const auto& v : flow.parameters()) flow_grads.push_back(g.grad(v));
  const std::vector<Tensor> probe_grads{g.grad(label.weight), g.grad(label.bias), g.grad(sens.weight), g.grad(sens.bias)};
  for (const auto& gr : flow_grads)
    if (!gr.all_finite()) throw DivergenceError("non-finite gradient");

  auto fp = flow_parameters(st);
  auto pp = probe_parameters(st);
  adam_step(fp, flow_grads, st.flow_adam, cfg.flow_lr, cfg.flow_weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps);
  adam_step(pp, probe_grads, st.probe_adam, cfg.probe_lr, cfg.probe_weight_decay, cfg.beta1, cfg.beta2,
            cfg.adam_eps);
  if (cfg.precision == Precision::f32) {
    for (Tensor* p : fp) round_to_float(*p);
    for (Tensor* p : pp) round_to_float(*p);
    for (auto* s : {&st.flow_adam, &st.probe_adam}) {
      for (auto& t : s->m) round_to_float(t);
      for (auto& t : s->v) round_to_float(t);
    }
  }
  return {loss, terms.fair_label, terms.fair_sensitive, terms.nll, terms.cls};
}

void fill_validation(const TrainState& st, const EmbeddingDataset& data, EpochRecord& rec) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rec.val_nll = rec.val_eo = rec.val_dp = rec.val_wga = rec.val_acc = rec.val_sensitive_acc = nan;
  if (data.indices(Split::val).empty()) return;
  try {
    const Evaluation ev = evaluate(st, data, Split::val);
    rec.val_nll = ev.nll;
    rec.val_eo = ev.label.eo.to_double();
    rec.val_dp = ev.label.dp.to_double();
    rec.val_wga = ev.label.wga.to_double();
    rec.val_acc = ev.label.acc.to_double();
    rec.val_sensitive_acc = ev.sensitive.acc.to_double();
  } catch (const UndefinedMetricError&) {
    // val split too small to populate every cell; leave metrics as NaN
  }
}

}  // namespace

TrainState init_training(const EmbeddingDataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  const std::size_t d = data.d();
  TrainState st;
  st.config = config;
  st.model = FlowModel(config.flow_config(d), config.partition(d));
  st.label_classes = data.label_classes();
  st.group_classes = data.group_count();
  const auto& part = st.model.partition();
  const std::size_t y_in = config.flags.use_decompose ? part.label_width : d;
  const std::size_t s_in = config.flags.use_decompose ? part.sensitive_width : d;
  std::mt19937_64 rng(mix_seed(config.seed, 11));
  st.label_probe = LinearProbe::random(y_in, static_cast<std::size_t>(st.label_classes), rng);
  st.sensitive_probe = LinearProbe::random(s_in, static_cast<std::size_t>(st.group_classes), rng);

  const auto train_rows = data.indices(Split::train);
  const auto first = batches(train_rows, config.batch_size, config.seed, 0);
  if (first.empty()) throw InsufficientBatchError("training split has fewer than 2 samples");
  init_actnorm(st.model, gather_rows(data.e, first.front()));
  if (config.precision == Precision::f32) {
    for (auto& nt : st.model.tensors()) round_to_float(*nt.tensor);
    round_to_float(st.label_probe.weight);
    round_to_float(st.label_probe.bias);
    round_to_float(st.sensitive_probe.weight);
    round_to_float(st.sensitive_probe.bias);
  }
  return st;
}

TrainOutcome run_epochs(TrainState& st, const EmbeddingDataset& data, std::size_t until_epoch,
                        const EpochCallback& on_epoch) {
  TrainOutcome outcome;
  const auto train_rows = data.indices(Split::train);
  const auto groups = data.groups();
  while (st.epoch < until_epoch) {
    const TrainState snapshot = st;
    EpochRecord rec;
    rec.epoch = static_cast<double>(st.epoch + 1);
    std::size_t count = 0;
    try {
      for (const auto& rows : batches(train_rows, st.config.batch_size, st.config.seed, st.epoch)) {
        BatchAnnotations ann;
        ann.y_classes = st.label_classes;
        ann.s_classes = st.group_classes;
        for (std::size_t r : rows) {
          ann.y.push_back(data.y[r]);
          ann.s.push_back(groups[r]);
        }
        const BatchTerms t = train_batch(st, gather_rows(data.e, rows), ann);
        rec.loss += t.loss;
        rec.fair_label += t.fair_label;
        rec.fair_sensitive += t.fair_sensitive;
        rec.nll += t.nll;
        rec.cls += t.cls;
        ++count;
      }
    } catch (const DomainError& err) {
      st = snapshot;
      outcome.diverged = true;
      outcome.message = std::string("diverged in epoch ") + std::to_string(st.epoch + 1) + ": " + err.what();
      return outcome;
    } catch (const DivergenceError& err) {
      st = snapshot;
      outcome.diverged = true;
      outcome.message = std::string("diverged in epoch ") + std::to_string(st.epoch + 1) + ": " + err.what();
      return outcome;
    }
    const double n = static_cast<double>(std::max<std::size_t>(count, 1));
    rec.loss /= n;
    rec.fair_label /= n;
    rec.fair_sensitive /= n;
    rec.nll /= n;
    rec.cls /= n;
    ++st.epoch;
    fill_validation(st, data, rec);
    st.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  outcome.selected_epoch = st.epoch;
  return outcome;
}

TrainResult train(const EmbeddingDataset& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  TrainResult result{init_training(data, config), {}};
  TrainState& st = result.state;
  if (!config.select_best) {
    result.outcome = run_epochs(st, data, config.epochs, on_epoch);
    return result;
  }
  if (std::isnan(config.baseline_accuracy)) throw ConfigError("select_best requires baseline_accuracy");
  std::optional<TrainState> best;
  double best_eo = std::numeric_limits<double>::infinity();
  while (st.epoch < config.epochs) {
    result.outcome = run_epochs(st, data, st.epoch + 1, on_epoch);
    if (result.outcome.diverged) break;
    const auto& rec = st.history.back();
    if (std::abs(rec.val_acc - config.baseline_accuracy) <= 0.05 && rec.val_eo < best_eo) {
      best_eo = rec.val_eo;
      best = st;
    }
  }
  const bool diverged = result.outcome.diverged;
  const std::string message = result.outcome.message;
  if (best) {
    auto history = st.history;
    st = *best;
    st.history = std::move(history);
  }
  result.outcome.diverged = diverged;
  result.outcome.message = message;
  result.outcome.selected_epoch = st.epoch;
  return result;
}

Evaluation evaluate(const TrainState& st, const EmbeddingDataset& data, Split split) {
  const SplitView v = view(data, split);
  if (v.rows.empty()) throw UndefinedMetricError("split '" + to_string(split) + "' is empty");
  const auto fwd = forward(st.model, v.e, st.config.precision);
  Evaluation ev;
  double nll = 0.0;
  for (std::size_t i = 0; i < fwd.z.rows(); ++i) {
    double sq = 0.0;
    for (double x : fwd.z.row_span(i)) sq += x * x;
    nll += 0.5 * sq - fwd.logdet[i];
  }
  ev.nll = nll / static_cast<double>(fwd.z.rows());

  PredictionSet label{st.label_probe.predict(label_block(st, fwd.z)), v.y, v.s, st.label_classes, st.group_classes};
  PredictionSet sens{st.sensitive_probe.predict(sensitive_block(st, fwd.z)), v.s, v.y, st.group_classes,
                     st.label_classes};
  ev.label = report(label);
  ev.sensitive = report(sens);
  ev.z = fwd.z;
  return ev;
}

std::vector<AblationFlags> ablation_configs(AblationTable table) {
  if (table == AblationTable::cumulative)
    return {AblationFlags::inn(), AblationFlags::dgeq(), AblationFlags::di(), AblationFlags::full()};
  // (De, dg, eq, di)
  const int rows[8][4] = {{0, 0, 0, 0}, {0, 1, 0, 0}, {1, 0, 0, 0}, {1, 1, 0, 0},
                          {1, 1, 1, 0}, {1, 0, 0, 1}, {1, 1, 0, 1}, {1, 1, 1, 1}};
  std::vector<AblationFlags> out;
  for (const auto& r : rows) {
    AblationFlags f;
    f.use_decompose = r[0] != 0;
    f.use_dg = r[1] != 0;
    f.use_eq = r[2] != 0;
    f.use_di = r[3] != 0;
    f.use_g = false;
    out.push_back(f);
  }
  return out;
}

std::vector<AblationRow> ablation_grid(const EmbeddingDataset& data, const TrainConfig& base, AblationTable table) {
  std::vector<AblationRow> out;
  for (const auto& flags : ablation_configs(table)) {
    TrainConfig cfg = base;
    cfg.flags = flags;
    cfg.select_best = false;
    auto result = train(data, cfg);
    out.push_back({flags, evaluate(result.state, data, Split::test).label, result.outcome});
  }
  return out;
}

}  // namespace fairlatent
