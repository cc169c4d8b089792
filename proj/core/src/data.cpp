#include "fairlatent/data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fairlatent/binary_io.hpp"
#include "fairlatent/errors.hpp"
#include "fairlatent/linalg.hpp"
#include "fairlatent/seeding.hpp"

namespace fairlatent {

namespace {
constexpr std::uint32_t kFormatVersion = 1;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train" || s == "0") return Split::train;
  if (s == "val" || s == "1") return Split::val;
  if (s == "test" || s == "2") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

int EmbeddingDataset::label_classes() const {
  int m = 1;
  for (int v : y) m = std::max(m, v);
  return m + 1;
}

std::vector<int> EmbeddingDataset::attr_cardinalities() const {
  std::vector<int> out;
  for (const auto& a : attrs) {
    int m = 1;
    for (int v : a) m = std::max(m, v);
    out.push_back(m + 1);
  }
  return out;
}

int EmbeddingDataset::group_count() const {
  int total = 1;
  for (int c : attr_cardinalities()) total *= c;
  return total;
}

std::vector<int> EmbeddingDataset::groups() const {
  const auto card = attr_cardinalities();
  std::vector<int> out(n(), 0);
  int radix = 1;
  for (std::size_t k = 0; k < attrs.size(); ++k) {
    for (std::size_t i = 0; i < n(); ++i) out[i] += attrs[k][i] * radix;
    radix *= card[k];
  }
  return out;
}

std::vector<std::size_t> EmbeddingDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

void EmbeddingDataset::validate() const {
  if (e.rank() != 2 || e.rows() != y.size()) throw ConfigError("embedding rows do not match label count");
  if (split.size() != n()) throw ConfigError("split tags do not match sample count");
  if (attrs.empty()) throw ConfigError("dataset needs at least one sensitive attribute");
  for (const auto& a : attrs)
    if (a.size() != n()) throw ConfigError("attribute column length does not match sample count");
  if (!e.all_finite()) throw ConfigError("embeddings contain NaN/Inf");
  auto check_column = [](const std::vector<int>& col, const char* what) {
    for (int v : col)
      if (v < 0 || v > 255) throw ConfigError(std::string(what) + " index outside [0, 255]");
    if (!col.empty() && std::all_of(col.begin(), col.end(), [&](int v) { return v == col.front(); }))
      throw ConfigError(std::string(what) + " takes a single value; cardinality must be >= 2");
  };
  check_column(y, "label");
  for (const auto& a : attrs) check_column(a, "attribute");
}

bool EmbeddingDataset::operator==(const EmbeddingDataset& o) const {
  if (e.shape() != o.e.shape()) return false;
  for (std::size_t i = 0; i < e.size(); ++i)
    if (e[i] != o.e[i]) return false;
  return y == o.y && attrs == o.attrs && split == o.split;
}

SplitView view(const EmbeddingDataset& data, Split s) {
  SplitView v;
  v.rows = data.indices(s);
  v.e = v.rows.empty() ? Tensor() : gather_rows(data.e, v.rows);
  const auto g = data.groups();
  for (std::size_t r : v.rows) {
    v.y.push_back(data.y[r]);
    v.s.push_back(g[r]);
  }
  return v;
}

void SynthConfig::validate() const {
  if (!(rho >= -1.0 && rho <= 1.0)) throw ConfigError("rho must lie in [-1, 1], got " + std::to_string(rho));
  if (!std::isnan(eval_rho) && !(eval_rho >= -1.0 && eval_rho <= 1.0))
    throw ConfigError("eval_rho must lie in [-1, 1]");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (d < 4) throw ConfigError("embedding width d must be >= 4");
  if (attr_count < 1 || attr_count > 7) throw ConfigError("attr_count must lie in [1, 7]");
  if (2 + 2 * attr_count > d) throw ConfigError("d too small for the requested attribute count");
  if (n < 2) throw ConfigError("n must be >= 2");
  if (!(val_fraction >= 0 && test_fraction >= 0 && val_fraction + test_fraction < 1))
    throw ConfigError("split fractions must be nonnegative and sum below 1");
  if (!std::isfinite(signal_y) || !std::isfinite(signal_s)) throw ConfigError("signal strengths must be finite");
}

EmbeddingDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n, d = cfg.d;
  const double eval_rho = std::isnan(cfg.eval_rho) ? cfg.rho : cfg.eval_rho;

  std::mt19937_64 rng(mix_seed(cfg.seed, 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  EmbeddingDataset data;
  data.y.resize(n);
  data.split.resize(n);
  data.attrs.assign(cfg.attr_count, std::vector<int>(n));
  Tensor src = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double u = unit(rng);
    data.split[i] = u < 1.0 - cfg.val_fraction - cfg.test_fraction ? Split::train
                    : u < 1.0 - cfg.test_fraction                  ? Split::val
                                                                   : Split::test;
    const double r = data.split[i] == Split::train ? cfg.rho : eval_rho;
    const int y = unit(rng) < 0.5 ? 0 : 1;
    data.y[i] = y;
    src.at(i, static_cast<std::size_t>(y)) += cfg.signal_y;
    for (std::size_t k = 0; k < cfg.attr_count; ++k) {
      const bool flip = unit(rng) < (1.0 - r) / 2.0;
      const int s = flip ? 1 - y : y;
      data.attrs[k][i] = s;
      src.at(i, 2 + 2 * k + static_cast<std::size_t>(s)) += cfg.signal_s;
    }
    for (std::size_t j = 0; j < d; ++j) src.at(i, j) += cfg.sigma * normal(rng);
  }

  std::mt19937_64 map_rng(cfg.map_seed == 0 ? mix_seed(cfg.seed, 2) : cfg.map_seed);
  Tensor a = linalg::random_orthogonal(d, map_rng);
  for (std::size_t j = 0; j < d; ++j) {
    const double log_scale = std::clamp(0.3 * normal(map_rng), -0.6, 0.6);
    for (std::size_t i = 0; i < d; ++i) a.at(i, j) *= std::exp(log_scale);
  }
  data.e = linalg::matmul(src, linalg::transpose(a));
  for (std::size_t i = 0; i < data.e.size(); ++i) {
    const double x = data.e[i];
    data.e[i] = static_cast<double>(static_cast<float>(x + 0.2 * std::tanh(x)));
  }
  data.validate();
  return data;
}

double label_attribute_correlation(const EmbeddingDataset& data, std::size_t attr, std::span<const std::size_t> rows) {
  if (attr >= data.attr_count()) throw ContractError("attribute index out of range");
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(data.n());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rows = all;
  }
  double my = 0, ms = 0;
  for (std::size_t r : rows) {
    my += data.y[r];
    ms += data.attrs[attr][r];
  }
  const double n = static_cast<double>(rows.size());
  my /= n;
  ms /= n;
  double cov = 0, vy = 0, vs = 0;
  for (std::size_t r : rows) {
    const double a = data.y[r] - my, b = data.attrs[attr][r] - ms;
    cov += a * b;
    vy += a * a;
    vs += b * b;
  }
  if (vy == 0 || vs == 0) throw DegenerateDataError("correlation undefined for a constant column");
  return cov / std::sqrt(vy * vs);
}

std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& data, bool check) {
  if (check) data.validate();
  io::ByteWriter w;
  w.text("FLE1");
  w.u32(kFormatVersion);
  w.u64(data.n());
  w.u32(static_cast<std::uint32_t>(data.d()));
  w.u32(static_cast<std::uint32_t>(data.attr_count()));
  for (std::size_t i = 0; i < data.e.size(); ++i) w.f32(static_cast<float>(data.e[i]));
  for (int v : data.y) w.u8(static_cast<std::uint8_t>(v));
  for (const auto& a : data.attrs)
    for (int v : a) w.u8(static_cast<std::uint8_t>(v));
  for (Split s : data.split) w.u8(static_cast<std::uint8_t>(s));
  return w.buffer();
}

EmbeddingDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.text(4) != "FLE1") throw FormatError("bad magic: not an FLE1 dataset", 0);
  const auto version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw FormatError("unsupported dataset version " + std::to_string(version), version_at);
  const std::uint64_t n = r.u64();
  const std::uint32_t d = r.u32();
  const std::uint32_t attr_count = r.u32();
  if (d == 0 || n == 0) throw FormatError("empty dataset header", r.offset());
  const std::uint64_t body = n * d * 4 + n * (2 + static_cast<std::uint64_t>(attr_count));
  if (body > r.remaining()) {
    throw FormatError("truncated file: header announces " + std::to_string(body) + " payload bytes, " +
                          std::to_string(r.remaining()) + " present",
                      r.offset() + r.remaining());
  }
  EmbeddingDataset data;
  data.e = Tensor::zeros({static_cast<std::size_t>(n), d});
  for (std::size_t i = 0; i < data.e.size(); ++i) data.e[i] = r.f32();
  data.y.resize(n);
  for (auto& v : data.y) v = r.u8();
  data.attrs.assign(attr_count, std::vector<int>(n));
  for (auto& a : data.attrs)
    for (auto& v : a) v = r.u8();
  data.split.resize(n);
  for (auto& s : data.split) {
    const auto at = r.offset();
    const std::uint8_t tag = r.u8();
    if (tag > 2) throw FormatError("invalid split tag " + std::to_string(tag), at);
    s = static_cast<Split>(tag);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after dataset payload", r.offset());
  try {
    data.validate();
  } catch (const ConfigError& err) {
    throw FormatError(std::string("invalid dataset contents: ") + err.what(), 0);
  }
  return data;
}

void save_dataset(const EmbeddingDataset& data, const std::filesystem::path& path) {
  io::write_file(path, encode_dataset(data));
}

EmbeddingDataset load_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

EmbeddingDataset parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV file", 0);
  const auto header = split_csv_line(line);
  std::size_t d = 0;
  while (d < header.size() && header[d] == "e" + std::to_string(d)) ++d;
  if (d == 0) throw FormatError("CSV header must start with e0", 0);
  if (d >= header.size() || header[d] != "y") throw FormatError("CSV header: expected y after e" + std::to_string(d - 1), 0);
  std::size_t attr_count = 0;
  std::size_t col = d + 1;
  if (col < header.size() && header[col] == "s") {
    attr_count = 1;
    ++col;
  } else {
    while (col < header.size() && header[col] == "s" + std::to_string(attr_count)) {
      ++attr_count;
      ++col;
    }
  }
  if (attr_count == 0) throw FormatError("CSV header: expected s or s0 after y", 0);
  bool has_split = false;
  if (col < header.size() && header[col] == "split") {
    has_split = true;
    ++col;
  }
  if (col != header.size()) throw FormatError("CSV header: unexpected column '" + header[col] + "'", 0);

  std::vector<double> values;
  EmbeddingDataset data;
  data.attrs.resize(attr_count);
  std::uint64_t offset = line.size() + 1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::uint64_t at = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw FormatError("CSV line " + std::to_string(line_no) + ": wrong number of columns", at);
    try {
      for (std::size_t j = 0; j < d; ++j) {
        std::size_t used = 0;
        const double v = std::stod(cells[j], &used);
        if (used != cells[j].size()) throw std::invalid_argument("trailing characters");
        values.push_back(static_cast<double>(static_cast<float>(v)));
      }
      auto parse_int = [](const std::string& s) {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
      };
      data.y.push_back(parse_int(cells[d]));
      for (std::size_t k = 0; k < attr_count; ++k) data.attrs[k].push_back(parse_int(cells[d + 1 + k]));
      data.split.push_back(has_split ? parse_split(cells[d + 1 + attr_count]) : Split::train);
    } catch (const std::logic_error&) {
      throw FormatError("CSV line " + std::to_string(line_no) + ": malformed value", at);
    } catch (const ConfigError& err) {
      throw FormatError("CSV line " + std::to_string(line_no) + ": " + err.what(), at);
    }
  }
  if (data.y.empty()) throw FormatError("CSV file has no data rows", offset);
  data.e = Tensor({data.y.size(), d}, std::move(values));
  try {
    data.validate();
  } catch (const ConfigError& err) {
    throw FormatError(std::string("invalid CSV contents: ") + err.what(), 0);
  }
  return data;
}

EmbeddingDataset import_csv(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_csv(std::string(bytes.begin(), bytes.end()));
}

std::vector<std::vector<std::size_t>> batches(std::span<const std::size_t> rows, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  std::vector<std::size_t> order(rows.begin(), rows.end());
  std::mt19937_64 rng(mix_seed(seed, 1000 + epoch));
  shuffle(std::span<std::size_t>(order), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    if (end - i < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace fairlatent
