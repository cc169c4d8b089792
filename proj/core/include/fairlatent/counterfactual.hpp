#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fairlatent/data.hpp"
#include "fairlatent/probe.hpp"
#include "fairlatent/trainer.hpp"

namespace fairlatent {

enum class Block { label, sensitive };

/// Unit vector in full latent coordinates, supported on [begin, end).
struct Direction {
  Block block = Block::label;
  std::size_t begin = 0;
  std::size_t end = 0;
  Tensor unit;  // 1 x d
};

/// Normalizes `h` (living on latent coordinates [begin, begin + h.size())) and
/// embeds it into `dim` coordinates. Zero vector -> DegenerateDataError.
Direction direction_from_weights(std::span<const double> h, std::size_t begin, std::size_t dim,
                                 Block block = Block::label);

/// Direction of a trained probe: for two classes the positive-class weight
/// column minus the negative-class column.
Direction direction_from_probe(const TrainState& state, Block block, int positive = 1, int negative = 0);

/// z' = z + alpha * unit, applied to every row.
Tensor shift(const Tensor& z, const Direction& dir, double alpha);

struct TrajectoryPoint {
  double alpha;
  Tensor z;                           // shifted latents
  Tensor e;                           // inverted embeddings
  std::vector<double> label_margin;   // label probe logit(positive) - logit(negative)
  std::vector<double> sensitive_margin;
};

using CounterfactualTrajectory = std::vector<TrajectoryPoint>;

CounterfactualTrajectory trajectory(const TrainState& state, const Tensor& e, const Direction& dir,
                                    std::span<const double> alphas);

/// Default alpha grid {-3, -1.5, 0, 1.5, 3}.
std::vector<double> default_alpha_grid();
/// Parses "a,b,c" or "lo:hi:step".
std::vector<double> parse_alpha_grid(const std::string& text);

struct ShiftRow {
  double alpha;
  double value;  // misclassification rate or positive proportion, in [0, 1]
};

struct LinearFit {
  double slope = 0;
  double intercept = 0;
  double slope_stderr = 0;  // NaN with exactly two points
};

/// Ordinary least squares. Fewer than two points -> ContractError; all x equal
/// -> DegenerateDataError.
LinearFit linfit(std::span<const double> x, std::span<const double> y);

/// Shifts every latent of the split along `dir`, inverts to embedding space and
/// reports how often `embedding_probe` mislabels the sensitive group.
std::vector<ShiftRow> misclassification_vs_shift(const TrainState& state, const EmbeddingDataset& data, Split split,
                                                 const Direction& dir, const LinearProbe& embedding_probe,
                                                 std::span<const double> alphas);

struct ShiftRatio {
  std::vector<ShiftRow> rows;
  LinearFit fit;  // proportion in percentage points vs alpha
};

/// Samples N(alpha * unit, I) in latent space, inverts and records the share
/// classified as `positive` by `embedding_probe`.
ShiftRatio generative_shift_ratio(const FlowModel& model, Precision precision, const Direction& dir,
                                  std::span<const double> alphas, std::size_t n_samples,
                                  const LinearProbe& embedding_probe, std::uint64_t seed, int positive = 1);

/// Linear classifier for the sensitive group on raw embeddings of one split.
LinearProbe fit_embedding_probe(const EmbeddingDataset& data, Split split);

std::string shift_table_csv(const std::vector<ShiftRow>& rows, const char* value_name);

/// Writes `<prefix>.fle` (inverted embeddings, split tag test, one block per
/// alpha) and `<prefix>.csv` (sample, alpha, margins).
void export_trajectory(const CounterfactualTrajectory& traj, std::span<const int> y, std::span<const int> s,
                       const std::filesystem::path& prefix);

}  // namespace fairlatent
