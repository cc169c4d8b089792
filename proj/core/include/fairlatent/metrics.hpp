#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fairlatent {

__extension__ typedef __int128 int128_t;
__extension__ typedef unsigned __int128 uint128_t;

/// Exact nonnegative-denominator fraction over 128-bit integers, always reduced.
class Rational {
 public:
  Rational() = default;
  Rational(int128_t num, int128_t den);
  static Rational integer(std::int64_t v) { return Rational(v, 1); }

  int128_t numerator() const noexcept { return num_; }
  int128_t denominator() const noexcept { return den_; }
  double to_double() const;
  /// "p/q" in lowest terms ("p" when q == 1).
  std::string to_string() const;

  Rational operator+(const Rational& o) const;
  Rational operator-(const Rational& o) const;
  Rational operator*(const Rational& o) const;
  Rational operator/(const Rational& o) const;
  Rational abs() const;
  bool operator==(const Rational& o) const noexcept { return num_ == o.num_ && den_ == o.den_; }
  bool operator<(const Rational& o) const;

 private:
  int128_t num_ = 0;
  int128_t den_ = 1;
};

/// Predicted label, true label and group index per sample.
struct PredictionSet {
  std::vector<int> predicted;
  std::vector<int> truth;
  std::vector<int> group;
  int num_classes = 2;
  int num_groups = 2;

  std::size_t size() const noexcept { return truth.size(); }
  /// Throws ContractError on empty input, mismatched lengths or out-of-range indices.
  void validate() const;
};

enum class EoReduction { mean, sum };

/// Equalized odds: per-class recall gap between groups, reduced over classes
/// (mean by default). More than two groups: maximum over unordered pairs.
Rational eo_exact(const PredictionSet& p, EoReduction reduction = EoReduction::mean);
/// Demographic parity gap in positive-prediction rate; max over pairs.
Rational dp_exact(const PredictionSet& p, int positive_label = 1);
/// Minimum accuracy over (label, group) cells.
Rational wga_exact(const PredictionSet& p);
Rational accuracy_exact(const PredictionSet& p);

inline double eo(const PredictionSet& p, EoReduction r = EoReduction::mean) { return eo_exact(p, r).to_double(); }
inline double dp(const PredictionSet& p, int positive_label = 1) { return dp_exact(p, positive_label).to_double(); }
inline double wga(const PredictionSet& p) { return wga_exact(p).to_double(); }
inline double accuracy(const PredictionSet& p) { return accuracy_exact(p).to_double(); }

struct CellAccuracy {
  int label;
  int group;
  std::uint64_t count;
  std::uint64_t correct;
};

struct FairnessReport {
  Rational eo, dp, wga, acc;
  std::vector<CellAccuracy> per_group;

  /// key=value lines; rates are printed as percentages (x100) and exactly.
  std::string to_text(const std::string& prefix = "") const;
};

/// Bundles all metrics. Throws UndefinedMetricError when a required cell is empty.
FairnessReport report(const PredictionSet& p, int positive_label = 1, EoReduction r = EoReduction::mean);

}  // namespace fairlatent
