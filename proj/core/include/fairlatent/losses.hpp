#pragma once

#include <span>
#include <string>
#include <vector>

#include "fairlatent/autodiff.hpp"
#include "fairlatent/flow.hpp"

namespace fairlatent {

struct FairLossConfig {
  double lambda_dg = 1.0;
  double lambda_eq = 10.0;
  double lambda_di = 1.0;
  double c = 1.0;         // per-dimension standard deviation target
  double eps_eq = 1e-4;
  double eps_d = 1e-4;
  double lambda_cls = 1.0;

  void validate() const;
};

/// Which loss components are active. The named presets follow the cumulative
/// ablation rows: inn -> dgeq -> di -> full.
struct AblationFlags {
  bool use_dg = true;
  bool use_eq = true;
  bool use_di = true;
  bool use_g = true;
  bool use_decompose = true;

  static AblationFlags inn();
  static AblationFlags dgeq();
  static AblationFlags di();
  static AblationFlags full();
  /// "inn", "dgeq", "di" or "full"; ConfigError otherwise.
  static AblationFlags preset(const std::string& name);

  /// Compact label such as "De+dg+eq" used in ablation tables.
  std::string describe() const;
  bool operator==(const AblationFlags&) const = default;
};

/// Per-sample label and joint sensitive-group indices for one batch.
struct BatchAnnotations {
  std::vector<int> y;
  std::vector<int> s;
  int y_classes = 2;
  int s_classes = 2;

  /// DimensionError on length mismatch, ContractError on out-of-range indices.
  void validate(std::size_t n) const;
};

/// For `label` the masks pull together samples sharing y across different s;
/// for `sensitive` the roles of y and s swap.
enum class TargetRole { label, sensitive };

enum class NllForm {
  standard,  // mean(0.5 |z|^2 - logdet)
  literal    // -mean(|z|^2 + logdet); diverges under minimization, diagnostics only
};

namespace losses {

/// Population covariance (1/n) of the rows of z. InsufficientBatchError if n < 2.
ad::Var covariance(ad::Var z);

/// (1/k) * sum of squared off-diagonal entries.
ad::Var diag_loss(ad::Var c);

/// (1/k) * sum_j max(0, c - sqrt(Var(z_j) + eps)).
ad::Var eq_loss(ad::Var z, double c, double eps);

/// log((|u-v|^2 + 1) / (|u-v|^2 + eps)).
double bounded_distance(std::span<const double> u, std::span<const double> v, double eps);

/// n x n matrix of bounded distances between rows of z.
ad::Var pairwise_bounded_distance(ad::Var z, double eps);

ad::Var distance_loss(ad::Var z, const BatchAnnotations& ann, TargetRole role, double eps);

/// Weighted sum of the enabled components on one latent block. Disabled
/// components are skipped entirely rather than multiplied by zero.
ad::Var fair_loss(ad::Var z, const BatchAnnotations& ann, const FairLossConfig& cfg, const AblationFlags& flags,
                  TargetRole role);

ad::Var nll_from_latents(ad::Var z, ad::Var logdet, NllForm form = NllForm::standard);
ad::Var nll_loss(const BoundFlow& flow, ad::Var e, NllForm form = NllForm::standard);

/// Mean softmax cross-entropy of the linear probe z * weight + bias.
ad::Var probe_ce(ad::Var weight, ad::Var bias, ad::Var z, std::span<const int> targets);

struct ProbeVars {
  ad::Var weight;
  ad::Var bias;
};

struct LossTerms {
  ad::Var total;
  double fair_label = 0.0;
  double fair_sensitive = 0.0;
  double nll = 0.0;
  double cls = 0.0;
};

/// L_fair(Z^Y) + L_fair(Z^S) + L_g + lambda_cls * (CE_y + CE_s).
/// Without decomposition, L_fair is applied once to the full latent with label
/// masks and both probes read the full latent.
LossTerms total_loss(ad::Var z, ad::Var logdet, const LatentPartition& partition, const ProbeVars& label_probe,
                     const ProbeVars& sensitive_probe, const BatchAnnotations& ann, const FairLossConfig& cfg,
                     const AblationFlags& flags);

}  // namespace losses
}  // namespace fairlatent
