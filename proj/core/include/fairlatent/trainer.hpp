#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fairlatent/config_text.hpp"
#include "fairlatent/data.hpp"
#include "fairlatent/flow.hpp"
#include "fairlatent/losses.hpp"
#include "fairlatent/metrics.hpp"
#include "fairlatent/probe.hpp"

namespace fairlatent {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double flow_lr = 1e-4;
  double flow_weight_decay = 1e-4;
  double probe_lr = 1e-5;
  double probe_weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  FairLossConfig loss;
  AblationFlags flags = AblationFlags::full();
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;
  std::size_t num_blocks = 12;
  std::size_t subnet_depth = 2;
  std::size_t hidden_width = 512;
  double clamp = 2.0;
  std::size_t label_width = 0;      // 0: half of the embedding width
  std::size_t sensitive_width = 0;  // 0: half of the embedding width
  /// Keep the epoch with the lowest validation EO among those whose accuracy
  /// is within 5 points of `baseline_accuracy`. Off by default.
  bool select_best = false;
  double baseline_accuracy = std::numeric_limits<double>::quiet_NaN();

  /// Desk-scale profile: 4 blocks, hidden 64, 30 epochs, probe lr 1e-3.
  static TrainConfig small_profile();

  void validate() const;
  FlowConfig flow_config(std::size_t dim) const;
  LatentPartition partition(std::size_t dim) const;

  KeyValueText to_text() const;
  /// Unknown keys raise ConfigError; missing keys keep the values of `base`.
  static TrainConfig from_text(const KeyValueText& text, const TrainConfig& base);
  static TrainConfig from_text(const KeyValueText& text) { return from_text(text, TrainConfig{}); }
  static const std::set<std::string, std::less<>>& known_keys();
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

/// One Adam step with decoupled weight decay: p <- p - lr*wd*p, then the
/// bias-corrected Adam update. Moments are created on first use.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               double weight_decay, double beta1, double beta2, double eps);

struct EpochRecord {
  double epoch = 0;
  double loss = 0;           // means over the epoch's batches
  double fair_label = 0;
  double fair_sensitive = 0;
  double nll = 0;
  double cls = 0;
  double val_nll = 0;
  double val_eo = 0;         // label probe; NaN when a validation cell is empty
  double val_dp = 0;
  double val_wga = 0;
  double val_acc = 0;
  double val_sensitive_acc = 0;

  static constexpr std::size_t kColumns = 12;
  static const char* const kColumnNames[kColumns];
  std::vector<double> to_row() const;
  static EpochRecord from_row(std::span<const double> row);
};

/// Everything needed to continue training bit-exactly.
struct TrainState {
  TrainConfig config;
  FlowModel model;
  LinearProbe label_probe;
  LinearProbe sensitive_probe;
  AdamState flow_adam;
  AdamState probe_adam;
  std::size_t epoch = 0;  // completed epochs
  int label_classes = 2;
  int group_classes = 2;
  std::vector<EpochRecord> history;
};

/// Latent block read by the label / sensitive probe under the state's flags.
Tensor label_block(const TrainState& state, const Tensor& z);
Tensor sensitive_block(const TrainState& state, const Tensor& z);

/// Builds the model and probes and initializes actnorm on the first batch.
TrainState init_training(const EmbeddingDataset& data, const TrainConfig& config);

struct TrainOutcome {
  bool diverged = false;
  std::string message;
  std::size_t selected_epoch = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs epochs until `state.epoch == until_epoch`. On a non-finite loss the
/// state is rolled back to the end of the last completed epoch.
TrainOutcome run_epochs(TrainState& state, const EmbeddingDataset& data, std::size_t until_epoch,
                        const EpochCallback& on_epoch = {});

struct TrainResult {
  TrainState state;
  TrainOutcome outcome;
};

TrainResult train(const EmbeddingDataset& data, const TrainConfig& config, const EpochCallback& on_epoch = {});

struct Evaluation {
  FairnessReport label;      // label probe on Z^Y, groups = sensitive attribute
  FairnessReport sensitive;  // sensitive probe on Z^S, groups = label
  double nll = 0;
  Tensor z;
};

/// Throws UndefinedMetricError when the split lacks a (label, group) cell.
Evaluation evaluate(const TrainState& state, const EmbeddingDataset& data, Split split);

struct AblationRow {
  AblationFlags flags;
  FairnessReport report;
  TrainOutcome outcome;
};

enum class AblationTable { cumulative, decomposition };

/// cumulative: INN, +dg,eq, +di, +g (4 runs). decomposition: the 8 De/dg/eq/di
/// combinations without L_g. Each row is evaluated on the test split.
std::vector<AblationFlags> ablation_configs(AblationTable table);
std::vector<AblationRow> ablation_grid(const EmbeddingDataset& data, const TrainConfig& base, AblationTable table);

}  // namespace fairlatent
