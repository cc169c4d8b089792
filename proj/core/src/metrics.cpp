#include "fairlatent/metrics.hpp"

#include <cstdio>
#include <numeric>

#include "fairlatent/errors.hpp"

namespace fairlatent {

namespace {

int128_t gcd128(int128_t a, int128_t b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    const int128_t t = a % b;
    a = b;
    b = t;
  }
  return a;
}

std::string int128_string(int128_t v) {
  if (v == 0) return "0";
  const bool neg = v < 0;
  uint128_t u = neg ? static_cast<uint128_t>(-(v + 1)) + 1 : static_cast<uint128_t>(v);
  std::string s;
  while (u > 0) {
    s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(u % 10)));
    u /= 10;
  }
  return neg ? "-" + s : s;
}

}  // namespace

Rational::Rational(int128_t num, int128_t den) {
  if (den == 0) throw ContractError("rational with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const int128_t g = gcd128(num, den);
  num_ = g == 0 ? 0 : num / g;
  den_ = g == 0 ? 1 : den / g;
}

double Rational::to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

std::string Rational::to_string() const {
  return den_ == 1 ? int128_string(num_) : int128_string(num_) + "/" + int128_string(den_);
}

Rational Rational::operator+(const Rational& o) const {
  const int128_t g = gcd128(den_, o.den_);
  return Rational(num_ * (o.den_ / g) + o.num_ * (den_ / g), den_ / g * o.den_);
}
Rational Rational::operator-(const Rational& o) const { return *this + Rational(-o.num_, o.den_); }
Rational Rational::operator*(const Rational& o) const {
  const int128_t g1 = gcd128(num_, o.den_), g2 = gcd128(o.num_, den_);
  const int128_t a = g1 == 0 ? 1 : g1, b = g2 == 0 ? 1 : g2;
  return Rational((num_ / a) * (o.num_ / b), (den_ / b) * (o.den_ / a));
}
Rational Rational::operator/(const Rational& o) const {
  if (o.num_ == 0) throw ContractError("rational division by zero");
  return *this * Rational(o.den_, o.num_);
}
Rational Rational::abs() const { return num_ < 0 ? Rational(-num_, den_) : *this; }
bool Rational::operator<(const Rational& o) const { return (*this - o).num_ < 0; }

void PredictionSet::validate() const {
  if (truth.empty()) throw ContractError("prediction set is empty");
  if (predicted.size() != truth.size() || group.size() != truth.size())
    throw ContractError("prediction set columns differ in length");
  if (num_classes < 2 || num_groups < 1) throw ContractError("prediction set needs >= 2 classes");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes)
      throw ContractError("label index out of range at sample " + std::to_string(i));
    if (group[i] < 0 || group[i] >= num_groups)
      throw ContractError("group index out of range at sample " + std::to_string(i));
  }
}

namespace {

struct Counts {
  int classes, groups;
  std::vector<std::uint64_t> cell, cell_correct, group_total, group_predicted;  // cell: [y][g]; predicted: [g][c]

  explicit Counts(const PredictionSet& p)
      : classes(p.num_classes),
        groups(p.num_groups),
        cell(static_cast<std::size_t>(classes * groups)),
        cell_correct(cell.size()),
        group_total(static_cast<std::size_t>(groups)),
        group_predicted(static_cast<std::size_t>(groups * classes)) {
    p.validate();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto c = static_cast<std::size_t>(p.truth[i] * groups + p.group[i]);
      ++cell[c];
      if (p.predicted[i] == p.truth[i]) ++cell_correct[c];
      ++group_total[static_cast<std::size_t>(p.group[i])];
      ++group_predicted[static_cast<std::size_t>(p.group[i] * classes + p.predicted[i])];
    }
  }

  std::size_t idx(int y, int g) const { return static_cast<std::size_t>(y * groups + g); }

  Rational recall(int y, int g) const {
    const auto n = cell[idx(y, g)];
    if (n == 0) {
      throw UndefinedMetricError("empty cell (label " + std::to_string(y) + ", group " + std::to_string(g) + ")");
    }
    return Rational(static_cast<int128_t>(cell_correct[idx(y, g)]), static_cast<int128_t>(n));
  }

  std::vector<int> present_groups() const {
    std::vector<int> out;
    for (int g = 0; g < groups; ++g)
      if (group_total[static_cast<std::size_t>(g)] > 0) out.push_back(g);
    return out;
  }
};

std::vector<int> groups_for_pairs(const Counts& c) {
  auto present = c.present_groups();
  if (present.size() < 2) throw UndefinedMetricError("fewer than two sensitive groups present");
  return present;
}

}  // namespace

Rational eo_exact(const PredictionSet& p, EoReduction reduction) {
  const Counts c(p);
  const auto present = groups_for_pairs(c);
  Rational worst;
  for (std::size_t a = 0; a < present.size(); ++a) {
    for (std::size_t b = a + 1; b < present.size(); ++b) {
      Rational gap;
      for (int y = 0; y < c.classes; ++y) gap = gap + (c.recall(y, present[b]) - c.recall(y, present[a])).abs();
      if (reduction == EoReduction::mean) gap = gap / Rational::integer(c.classes);
      if (worst < gap) worst = gap;
    }
  }
  return worst;
}

Rational dp_exact(const PredictionSet& p, int positive_label) {
  if (positive_label < 0 || positive_label >= p.num_classes) throw ContractError("positive label out of range");
  const Counts c(p);
  const auto present = groups_for_pairs(c);
  auto rate = [&](int g) {
    const auto gi = static_cast<std::size_t>(g);
    return Rational(static_cast<int128_t>(c.group_predicted[gi * static_cast<std::size_t>(c.classes) +
                                                            static_cast<std::size_t>(positive_label)]),
                    static_cast<int128_t>(c.group_total[gi]));
  };
  Rational worst;
  for (std::size_t a = 0; a < present.size(); ++a)
    for (std::size_t b = a + 1; b < present.size(); ++b) {
      const Rational gap = (rate(present[b]) - rate(present[a])).abs();
      if (worst < gap) worst = gap;
    }
  return worst;
}

Rational wga_exact(const PredictionSet& p) {
  const Counts c(p);
  Rational worst = Rational::integer(1);
  for (int y = 0; y < c.classes; ++y)
    for (int g = 0; g < c.groups; ++g) {
      const Rational r = c.recall(y, g);
      if (r < worst) worst = r;
    }
  return worst;
}

Rational accuracy_exact(const PredictionSet& p) {
  p.validate();
  std::uint64_t correct = 0;
  for (std::size_t i = 0; i < p.size(); ++i) correct += p.predicted[i] == p.truth[i] ? 1 : 0;
  return Rational(static_cast<int128_t>(correct), static_cast<int128_t>(p.size()));
}

FairnessReport report(const PredictionSet& p, int positive_label, EoReduction r) {
  FairnessReport out;
  out.eo = eo_exact(p, r);
  out.dp = dp_exact(p, positive_label);
  out.wga = wga_exact(p);
  out.acc = accuracy_exact(p);
  const Counts c(p);
  for (int y = 0; y < c.classes; ++y)
    for (int g = 0; g < c.groups; ++g)
      out.per_group.push_back({y, g, c.cell[c.idx(y, g)], c.cell_correct[c.idx(y, g)]});
  return out;
}

std::string FairnessReport::to_text(const std::string& prefix) const {
  std::string out;
  char buf[64];
  auto line = [&](const char* key, const Rational& v) {
    std::snprintf(buf, sizeof buf, "%.6f", 100.0 * v.to_double());
    out += prefix + key + "=" + buf + "\n";
    out += prefix + key + "_exact=" + v.to_string() + "\n";
  };
  line("eo", eo);
  line("dp", dp);
  line("wga", wga);
  line("acc", acc);
  for (const auto& cell : per_group) {
    out += prefix + "cell.y" + std::to_string(cell.label) + ".g" + std::to_string(cell.group) + "=" +
           std::to_string(cell.correct) + "/" + std::to_string(cell.count) + "\n";
  }
  return out;
}

}  // namespace fairlatent
