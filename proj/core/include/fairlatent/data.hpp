#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fairlatent/tensor.hpp"

namespace fairlatent {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

std::string to_string(Split s);
Split parse_split(const std::string& s);

/// Embeddings with a label and one or more categorical sensitive attributes.
/// Embedding values are kept float32-representable so the binary file
/// round-trip is exact.
struct EmbeddingDataset {
  Tensor e;                             // n x d
  std::vector<int> y;
  std::vector<std::vector<int>> attrs;  // attr_count blocks of n entries
  std::vector<Split> split;

  std::size_t n() const noexcept { return y.size(); }
  std::size_t d() const noexcept { return e.cols(); }
  std::size_t attr_count() const noexcept { return attrs.size(); }

  int label_classes() const;
  /// Cardinality of each attribute (max index + 1, at least 2).
  std::vector<int> attr_cardinalities() const;
  /// Number of joint groups (product of attribute cardinalities).
  int group_count() const;
  /// Mixed-radix joint group index per sample, first attribute least significant.
  std::vector<int> groups() const;

  std::vector<std::size_t> indices(Split s) const;

  /// Throws ConfigError on NaN/Inf, inconsistent sizes or single-valued labels.
  void validate() const;

  bool operator==(const EmbeddingDataset& o) const;
};

/// Rows of one split, with joint group indices.
struct SplitView {
  Tensor e;
  std::vector<int> y;
  std::vector<int> s;
  std::vector<std::size_t> rows;  // indices into the source dataset
};

SplitView view(const EmbeddingDataset& data, Split s);

struct SynthConfig {
  std::size_t n = 8192;
  std::size_t d = 16;
  double signal_y = 0.70710678118654752;  // one-hot amplitude; unit separation between classes
  double signal_s = 0.70710678118654752;
  double rho = 0.8;       // corr(y, s) in the train split
  double eval_rho = std::numeric_limits<double>::quiet_NaN();  // val/test split; NaN means rho
  double sigma = 0.5;
  std::size_t attr_count = 1;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  std::uint64_t map_seed = 0;  // entangling map; 0 derives it from seed
  std::uint64_t seed = 7;

  void validate() const;
};

/// e = g(A * src) with src = [signal_y onehot(y); signal_s onehot(s_k)...; 0...] + sigma N(0, I),
/// A a seeded well-conditioned random linear map and g(x) = x + 0.2 tanh(x).
/// Each attribute agrees with y except for an independent flip with
/// probability (1 - rho) / 2, so corr(y, s_k) = rho.
EmbeddingDataset generate_synthetic(const SynthConfig& cfg);

/// Pearson correlation between y and attribute `attr` over the given rows (all if empty).
double label_attribute_correlation(const EmbeddingDataset& data, std::size_t attr = 0,
                                   std::span<const std::size_t> rows = {});

/// `check = false` skips the cardinality checks (used for counterfactual exports of a single sample).
std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& data, bool check = true);
EmbeddingDataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const EmbeddingDataset& data, const std::filesystem::path& path);
EmbeddingDataset load_dataset(const std::filesystem::path& path);

/// Header `e0..e{d-1},y,s0[,s1...]` (a lone `s` is accepted for s0) with an
/// optional `split` column holding 0/1/2 or train/val/test. Rows without a
/// split column are tagged train.
EmbeddingDataset parse_csv(const std::string& text);
EmbeddingDataset import_csv(const std::filesystem::path& path);

/// Seeded shuffle of `rows` for one epoch, cut into batches. A trailing
/// batch is kept when it holds at least two samples.
std::vector<std::vector<std::size_t>> batches(std::span<const std::size_t> rows, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch);

}  // namespace fairlatent
