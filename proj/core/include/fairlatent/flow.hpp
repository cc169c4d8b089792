#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fairlatent/autodiff.hpp"
#include "fairlatent/tensor.hpp"

namespace fairlatent {

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

/// Latent coordinates [0, label_width) hold label information and
/// [label_width, label_width + sensitive_width) the sensitive attribute.
struct LatentPartition {
  std::size_t label_width = 0;
  std::size_t sensitive_width = 0;

  std::size_t label_begin() const noexcept { return 0; }
  std::size_t label_end() const noexcept { return label_width; }
  std::size_t sensitive_begin() const noexcept { return label_width; }
  std::size_t sensitive_end() const noexcept { return label_width + sensitive_width; }

  /// Throws ConfigError unless both widths are >= 1 and fit in `dim`.
  void validate(std::size_t dim) const;

  /// Even split of `dim` (d/2 each, odd leftover coordinate unused).
  static LatentPartition halves(std::size_t dim);
};

struct FlowConfig {
  std::size_t dim = 0;
  std::size_t num_blocks = 12;
  std::size_t subnet_depth = 2;   // hidden layers per coupling subnetwork
  std::size_t hidden_width = 512;
  double clamp = 2.0;             // coupling log-scale = clamp * tanh(raw)
  std::uint64_t seed = 0;

  /// Desk-scale profile used by tests and the acceptance suite.
  static FlowConfig small(std::size_t dim, std::uint64_t seed = 0);
  void validate() const;
};

struct DenseLayer {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
};

struct FlowBlock {
  Tensor actnorm_log_scale;  // 1 x d
  Tensor actnorm_bias;       // 1 x d
  Tensor permutation;        // d x d, fixed
  Tensor lower;              // d x d, strictly-lower entries used
  Tensor upper;              // d x d, strictly-upper entries used
  Tensor log_diag;           // 1 x d, log|diag(U)|
  Tensor sign;               // 1 x d, fixed sign of diag(U)
  std::vector<DenseLayer> subnet;
  bool transforms_upper_half = true;  // alternates between blocks
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
  bool trainable;
};

struct ForwardResult {
  Tensor z;
  std::vector<double> logdet;  // per sample
};

/// Invertible map from embedding space to latent space: a stack of
/// (actnorm -> PLU invertible linear -> affine coupling) blocks.
class FlowModel {
 public:
  FlowModel() = default;

  /// Random initialization: seeded orthogonal linear maps, zero-output
  /// couplings (so each coupling starts as identity), actnorm pending.
  FlowModel(const FlowConfig& config, const LatentPartition& partition);

  /// Every block exactly the identity map; actnorm counts as initialized.
  static FlowModel identity(const FlowConfig& config, const LatentPartition& partition);

  std::size_t dim() const noexcept { return config_.dim; }
  const FlowConfig& config() const noexcept { return config_; }
  const LatentPartition& partition() const noexcept { return partition_; }
  const std::vector<FlowBlock>& blocks() const noexcept { return blocks_; }
  std::vector<FlowBlock>& blocks() noexcept { return blocks_; }

  bool actnorm_initialized() const noexcept { return actnorm_initialized_; }
  void mark_actnorm_initialized(bool v = true) noexcept { actnorm_initialized_ = v; }

  /// All tensors in a stable order; `trainable` is false for the fixed
  /// permutation and sign tensors.
  std::vector<NamedTensor> tensors();
  std::vector<NamedTensor> trainable_tensors();

 private:
  FlowConfig config_;
  LatentPartition partition_;
  std::vector<FlowBlock> blocks_;
  bool actnorm_initialized_ = false;
};

/// z = f(e) with exact per-sample log|det J|. Throws StateError before actnorm init.
ForwardResult forward(const FlowModel& model, const Tensor& e, Precision precision = Precision::f64);

/// e = f^{-1}(z).
Tensor inverse(const FlowModel& model, const Tensor& z, Precision precision = Precision::f64);

/// Applies a single block (value path, double precision).
ForwardResult forward_block(const FlowModel& model, std::size_t block, const Tensor& x);
Tensor inverse_block(const FlowModel& model, std::size_t block, const Tensor& z);

/// Data-dependent actnorm initialization: each actnorm layer standardizes its
/// input on `first_batch` (per-dimension mean 0, variance 1).
void init_actnorm(FlowModel& model, const Tensor& first_batch);

/// Flow parameters placed on a graph as leaves (variables when trainable).
class BoundFlow {
 public:
  BoundFlow(const FlowModel& model, ad::Graph& graph, bool trainable);

  struct Output {
    ad::Var z;
    ad::Var logdet;  // n x 1
  };

  Output forward(ad::Var e) const;

  /// Leaves in the order of FlowModel::trainable_tensors().
  const std::vector<ad::Var>& parameters() const noexcept { return trainable_vars_; }

 private:
  struct BlockVars {
    ad::Var log_scale, bias, permutation, lower, upper, log_diag, sign;
    std::vector<std::pair<ad::Var, ad::Var>> layers;
    bool transforms_upper_half;
  };

  const FlowModel* model_;
  ad::Graph* graph_;
  std::vector<BlockVars> blocks_;
  std::vector<ad::Var> trainable_vars_;
  ad::Var strict_lower_mask_, strict_upper_mask_, identity_, ones_column_;
};

}  // namespace fairlatent
