#include "fairlatent/losses.hpp"

#include <cmath>

#include "fairlatent/errors.hpp"

namespace fairlatent {

void FairLossConfig::validate() const {
  if (lambda_dg < 0 || lambda_eq < 0 || lambda_di < 0 || lambda_cls < 0)
    throw ConfigError("loss weights must be nonnegative");
  if (!(c > 0)) throw ConfigError("variance target c must be positive");
  if (!(eps_eq > 0 && eps_eq < 1)) throw ConfigError("eps_eq must lie in (0, 1)");
  if (!(eps_d > 0 && eps_d < 1)) throw ConfigError("eps_d must lie in (0, 1)");
}

AblationFlags AblationFlags::inn() { return {false, false, false, false, false}; }
AblationFlags AblationFlags::dgeq() { return {true, true, false, false, true}; }
AblationFlags AblationFlags::di() { return {true, true, true, false, true}; }
AblationFlags AblationFlags::full() { return {true, true, true, true, true}; }

AblationFlags AblationFlags::preset(const std::string& name) {
  if (name == "inn") return inn();
  if (name == "dgeq") return dgeq();
  if (name == "di") return di();
  if (name == "full") return full();
  throw ConfigError("unknown ablation '" + name + "' (expected inn, dgeq, di or full)");
}

std::string AblationFlags::describe() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += name;
  };
  add(use_decompose, "De");
  add(use_dg, "dg");
  add(use_eq, "eq");
  add(use_di, "di");
  add(use_g, "g");
  return out.empty() ? "INN" : out;
}

void BatchAnnotations::validate(std::size_t n) const {
  if (y.size() != n || s.size() != n) {
    throw DimensionError("annotations hold " + std::to_string(y.size()) + "/" + std::to_string(s.size()) +
                         " entries for a batch of " + std::to_string(n));
  }
  for (int v : y)
    if (v < 0 || v >= y_classes) throw ContractError("label index " + std::to_string(v) + " out of range");
  for (int v : s)
    if (v < 0 || v >= s_classes) throw ContractError("group index " + std::to_string(v) + " out of range");
}

namespace losses {

using ad::Var;

Var covariance(Var z) {
  const std::size_t n = z.rows();
  if (n < 2) throw InsufficientBatchError("covariance needs at least 2 samples, got " + std::to_string(n));
  Var centered = z - ad::column_means(z);
  return ad::matmul(ad::transpose(centered), centered) * (1.0 / static_cast<double>(n));
}

Var diag_loss(Var c) {
  const std::size_t k = c.rows();
  if (c.cols() != k) throw DimensionError("diag_loss expects a square matrix, got " + shape_string(c.shape()));
  Tensor mask = Tensor::full({k, k}, 1.0);
  for (std::size_t i = 0; i < k; ++i) mask.at(i, i) = 0.0;
  Var off = c * c.graph().constant(std::move(mask));
  return ad::sum(ad::square(off)) * (1.0 / static_cast<double>(k));
}

Var eq_loss(Var z, double c, double eps) {
  if (z.rows() < 2) throw InsufficientBatchError("eq_loss needs at least 2 samples");
  Var centered = z - ad::column_means(z);
  Var var = ad::column_means(ad::square(centered));
  Var sd = ad::sqrt(ad::add_scalar(var, eps));
  return ad::mean(ad::relu(ad::add_scalar(-sd, c)));
}

double bounded_distance(std::span<const double> u, std::span<const double> v, double eps) {
  if (u.size() != v.size()) throw DimensionError("bounded_distance: width mismatch");
  double d2 = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) d2 += (u[i] - v[i]) * (u[i] - v[i]);
  return std::log((d2 + 1.0) / (d2 + eps));
}

Var pairwise_bounded_distance(Var z, double eps) {
  ad::Graph& g = z.graph();
  const std::size_t n = z.rows();
  Var sq = ad::row_sums(ad::square(z));  // n x 1
  Var ones = g.constant(Tensor::full({1, n}, 1.0));
  Var sq_rows = ad::matmul(sq, ones);     // sq_i in every column
  Var gram = ad::matmul(z, ad::transpose(z));
  // relu removes tiny negative round-off on the diagonal
  Var d2 = ad::relu(sq_rows + ad::transpose(sq_rows) - gram * 2.0);
  return ad::log(ad::add_scalar(d2, 1.0)) - ad::log(ad::add_scalar(d2, eps));
}

Var distance_loss(Var z, const BatchAnnotations& ann, TargetRole role, double eps) {
  const std::size_t n = z.rows();
  if (n < 2) throw InsufficientBatchError("distance_loss needs at least 2 samples");
  ann.validate(n);
  const auto& target = role == TargetRole::label ? ann.y : ann.s;
  const auto& other = role == TargetRole::label ? ann.s : ann.y;

  Tensor pull = Tensor::zeros({n, n});
  Tensor push = Tensor::zeros({n, n});
  double pull_count = 0.0, push_count = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool same_target = target[i] == target[j];
      const bool same_other = other[i] == other[j];
      if (same_target && !same_other) {
        pull.at(i, j) = 1.0;
        pull_count += 1.0;
      } else if (same_other && !same_target) {
        push.at(i, j) = 1.0;
        push_count += 1.0;
      }
    }
  }

  ad::Graph& g = z.graph();
  Var dist = pairwise_bounded_distance(z, eps);
  Var out = g.constant(Tensor::scalar(0.0));
  if (pull_count > 0) out = out - ad::sum(dist * g.constant(std::move(pull))) * (1.0 / pull_count);
  if (push_count > 0) out = out + ad::sum(dist * g.constant(std::move(push))) * (1.0 / push_count);
  return out;
}

Var fair_loss(Var z, const BatchAnnotations& ann, const FairLossConfig& cfg, const AblationFlags& flags,
              TargetRole role) {
  Var out = z.graph().constant(Tensor::scalar(0.0));
  if (flags.use_dg && cfg.lambda_dg != 0.0) out = out + diag_loss(covariance(z)) * cfg.lambda_dg;
  if (flags.use_eq && cfg.lambda_eq != 0.0) out = out + eq_loss(z, cfg.c, cfg.eps_eq) * cfg.lambda_eq;
  if (flags.use_di && cfg.lambda_di != 0.0) out = out + distance_loss(z, ann, role, cfg.eps_d) * cfg.lambda_di;
  return out;
}

Var nll_from_latents(Var z, Var logdet, NllForm form) {
  Var sq = ad::row_sums(ad::square(z));
  if (form == NllForm::literal) return -ad::mean(sq + logdet);
  return ad::mean(sq * 0.5 - logdet);
}

Var nll_loss(const BoundFlow& flow, Var e, NllForm form) {
  const auto out = flow.forward(e);
  return nll_from_latents(out.z, out.logdet, form);
}

Var probe_ce(Var weight, Var bias, Var z, std::span<const int> targets) {
  return ad::softmax_cross_entropy(ad::matmul(z, weight) + bias, targets);
}

LossTerms total_loss(Var z, Var logdet, const LatentPartition& partition, const ProbeVars& label_probe,
                     const ProbeVars& sensitive_probe, const BatchAnnotations& ann, const FairLossConfig& cfg,
                     const AblationFlags& flags) {
  ann.validate(z.rows());
  LossTerms terms;
  ad::Graph& g = z.graph();
  Var total = g.constant(Tensor::scalar(0.0));
  Var label_block = z;
  Var sensitive_block = z;
  if (flags.use_decompose) {
    partition.validate(z.cols());
    label_block = ad::slice(z, partition.label_begin(), partition.label_end());
    sensitive_block = ad::slice(z, partition.sensitive_begin(), partition.sensitive_end());
    Var fy = fair_loss(label_block, ann, cfg, flags, TargetRole::label);
    Var fs = fair_loss(sensitive_block, ann, cfg, flags, TargetRole::sensitive);
    terms.fair_label = fy.value().item();
    terms.fair_sensitive = fs.value().item();
    total = total + fy + fs;
  } else {
    Var f = fair_loss(z, ann, cfg, flags, TargetRole::label);
    terms.fair_label = f.value().item();
    total = total + f;
  }
  if (flags.use_g) {
    Var nll = nll_from_latents(z, logdet);
    terms.nll = nll.value().item();
    total = total + nll;
  }
  if (cfg.lambda_cls != 0.0) {
    Var cls = probe_ce(label_probe.weight, label_probe.bias, label_block, ann.y) +
              probe_ce(sensitive_probe.weight, sensitive_probe.bias, sensitive_block, ann.s);
    terms.cls = cls.value().item();
    total = total + cls * cfg.lambda_cls;
  }
  terms.total = total;
  return terms;
}

}  // namespace losses
}  // namespace fairlatent
