#include "fairlatent/flow.hpp"

#include <cmath>
#include <random>

#include "fairlatent/errors.hpp"
#include "fairlatent/linalg.hpp"

namespace fairlatent {

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32" || s == "float32" || s == "single") return Precision::f32;
  if (s == "f64" || s == "float64" || s == "double") return Precision::f64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

void LatentPartition::validate(std::size_t dim) const {
  if (label_width < 1 || sensitive_width < 1) throw ConfigError("latent partition widths must be >= 1");
  if (label_width + sensitive_width > dim) {
    throw ConfigError("latent partition " + std::to_string(label_width) + "+" + std::to_string(sensitive_width) +
                      " exceeds dimension " + std::to_string(dim));
  }
}

LatentPartition LatentPartition::halves(std::size_t dim) { return {dim / 2, dim / 2}; }

FlowConfig FlowConfig::small(std::size_t dim, std::uint64_t seed) {
  FlowConfig c;
  c.dim = dim;
  c.num_blocks = 4;
  c.subnet_depth = 2;
  c.hidden_width = 64;
  c.seed = seed;
  return c;
}

void FlowConfig::validate() const {
  if (dim < 2) throw ConfigError("flow dimension must be >= 2");
  if (num_blocks < 1) throw ConfigError("flow needs at least one block");
  if (hidden_width < 1) throw ConfigError("subnet hidden width must be >= 1");
  if (!(clamp > 0.0)) throw ConfigError("coupling clamp must be positive");
}

namespace {

std::size_t split_point(std::size_t dim) { return dim / 2; }

std::pair<std::size_t, std::size_t> active_range(std::size_t dim, bool upper) {
  const std::size_t k = split_point(dim);
  return upper ? std::pair{k, dim} : std::pair{std::size_t{0}, k};
}

std::pair<std::size_t, std::size_t> condition_range(std::size_t dim, bool upper) {
  const std::size_t k = split_point(dim);
  return upper ? std::pair{std::size_t{0}, k} : std::pair{k, dim};
}

FlowBlock make_block(std::size_t dim, const FlowConfig& cfg, std::size_t index, std::mt19937_64& rng,
                     bool identity) {
  FlowBlock b;
  b.actnorm_log_scale = Tensor::zeros({1, dim});
  b.actnorm_bias = Tensor::zeros({1, dim});
  b.transforms_upper_half = index % 2 == 0;

  if (identity) {
    b.permutation = Tensor::identity(dim);
    b.lower = Tensor::zeros({dim, dim});
    b.upper = Tensor::zeros({dim, dim});
    b.log_diag = Tensor::zeros({1, dim});
    b.sign = Tensor::full({1, dim}, 1.0);
  } else {
    const Tensor q = linalg::random_orthogonal(dim, rng);
    const auto lu = linalg::lu_decompose(q);
    // lu: rows perm[i] of q -> L U, so q = P^T L U with P[i][perm[i]] = 1.
    b.permutation = Tensor::zeros({dim, dim});
    for (std::size_t i = 0; i < dim; ++i) b.permutation.at(lu.perm[i], i) = 1.0;
    b.lower = Tensor::zeros({dim, dim});
    b.upper = Tensor::zeros({dim, dim});
    b.log_diag = Tensor::zeros({1, dim});
    b.sign = Tensor::zeros({1, dim});
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < i; ++j) b.lower.at(i, j) = lu.lower.at(i, j);
      for (std::size_t j = i + 1; j < dim; ++j) b.upper.at(i, j) = lu.upper.at(i, j);
      const double u = lu.upper.at(i, i);
      b.log_diag[i] = std::log(std::abs(u));
      b.sign[i] = u < 0.0 ? -1.0 : 1.0;
    }
  }

  const auto [cb, ce] = condition_range(dim, b.transforms_upper_half);
  const auto [ab, ae] = active_range(dim, b.transforms_upper_half);
  std::size_t in = ce - cb;
  for (std::size_t layer = 0; layer < cfg.subnet_depth; ++layer) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer d{Tensor::zeros({in, cfg.hidden_width}), Tensor::zeros({1, cfg.hidden_width})};
    for (std::size_t i = 0; i < d.weight.size(); ++i) d.weight[i] = u(rng);
    for (std::size_t i = 0; i < d.bias.size(); ++i) d.bias[i] = u(rng);
    b.subnet.push_back(std::move(d));
    in = cfg.hidden_width;
  }
  // Zero output layer: the coupling starts as the identity.
  b.subnet.push_back({Tensor::zeros({in, 2 * (ae - ab)}), Tensor::zeros({1, 2 * (ae - ab)})});
  return b;
}

}  // namespace

FlowModel::FlowModel(const FlowConfig& config, const LatentPartition& partition)
    : config_(config), partition_(partition) {
  config_.validate();
  partition_.validate(config_.dim);
  std::mt19937_64 rng(config_.seed);
  for (std::size_t i = 0; i < config_.num_blocks; ++i) blocks_.push_back(make_block(config_.dim, config_, i, rng, false));
}

FlowModel FlowModel::identity(const FlowConfig& config, const LatentPartition& partition) {
  FlowModel m;
  m.config_ = config;
  m.partition_ = partition;
  m.config_.validate();
  m.partition_.validate(config.dim);
  std::mt19937_64 rng(config.seed);
  for (std::size_t i = 0; i < config.num_blocks; ++i) m.blocks_.push_back(make_block(config.dim, config, i, rng, true));
  m.actnorm_initialized_ = true;
  return m;
}

std::vector<NamedTensor> FlowModel::tensors() {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = "flow.block" + std::to_string(i) + ".";
    out.push_back({p + "actnorm.log_scale", &b.actnorm_log_scale, true});
    out.push_back({p + "actnorm.bias", &b.actnorm_bias, true});
    out.push_back({p + "invlinear.permutation", &b.permutation, false});
    out.push_back({p + "invlinear.lower", &b.lower, true});
    out.push_back({p + "invlinear.upper", &b.upper, true});
    out.push_back({p + "invlinear.log_diag", &b.log_diag, true});
    out.push_back({p + "invlinear.sign", &b.sign, false});
    for (std::size_t l = 0; l < b.subnet.size(); ++l) {
      out.push_back({p + "coupling.layer" + std::to_string(l) + ".weight", &b.subnet[l].weight, true});
      out.push_back({p + "coupling.layer" + std::to_string(l) + ".bias", &b.subnet[l].bias, true});
    }
  }
  return out;
}

std::vector<NamedTensor> FlowModel::trainable_tensors() {
  std::vector<NamedTensor> out;
  for (auto& t : tensors())
    if (t.trainable) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Value path, templated on the arithmetic type.

namespace {

template <typename T>
struct Rows {
  std::size_t n = 0, d = 0;
  std::vector<T> v;
  T* row(std::size_t i) { return v.data() + i * d; }
  const T* row(std::size_t i) const { return v.data() + i * d; }
};

template <typename T>
Rows<T> from_tensor(const Tensor& t) {
  Rows<T> r{t.rows(), t.cols(), std::vector<T>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) r.v[i] = static_cast<T>(t[i]);
  return r;
}

template <typename T>
Tensor to_tensor(const Rows<T>& r) {
  Tensor t = Tensor::zeros({r.n, r.d});
  for (std::size_t i = 0; i < r.v.size(); ++i) t[i] = static_cast<double>(r.v[i]);
  return t;
}

template <typename T>
void check_finite_rows(const Rows<T>& r, const char* where) {
  for (T x : r.v)
    if (!std::isfinite(static_cast<double>(x))) throw DomainError(std::string("non-finite value in ") + where);
}

/// Subnet output for one sample: `out` receives 2*m values (raw log-scale, shift).
template <typename T>
void subnet_eval(const FlowBlock& b, const T* cond, std::size_t cond_width, std::vector<T>& scratch_a,
                 std::vector<T>& scratch_b, std::vector<T>& out) {
  scratch_a.assign(cond, cond + cond_width);
  for (std::size_t l = 0; l < b.subnet.size(); ++l) {
    const DenseLayer& layer = b.subnet[l];
    const std::size_t in = layer.weight.rows(), width = layer.weight.cols();
    scratch_b.assign(width, T{});
    for (std::size_t j = 0; j < width; ++j) scratch_b[j] = static_cast<T>(layer.bias[j]);
    for (std::size_t p = 0; p < in; ++p) {
      const T x = scratch_a[p];
      const double* w = layer.weight.data().data() + p * width;
      for (std::size_t j = 0; j < width; ++j) scratch_b[j] += x * static_cast<T>(w[j]);
    }
    const bool last = l + 1 == b.subnet.size();
    if (!last)
      for (auto& v : scratch_b) v = std::tanh(v);
    std::swap(scratch_a, scratch_b);
  }
  out = scratch_a;
}

template <typename T>
void block_forward(const FlowModel& model, const FlowBlock& b, Rows<T>& x, std::vector<double>& logdet) {
  const std::size_t n = x.n, d = x.d;
  const T clamp = static_cast<T>(model.config().clamp);
  double constant = 0.0;
  for (std::size_t j = 0; j < d; ++j) constant += b.actnorm_log_scale[j] + b.log_diag[j];

  std::vector<T> scale(d), bias(d), diag(d);
  for (std::size_t j = 0; j < d; ++j) {
    scale[j] = static_cast<T>(std::exp(b.actnorm_log_scale[j]));
    bias[j] = static_cast<T>(b.actnorm_bias[j]);
    diag[j] = static_cast<T>(b.sign[j] * std::exp(b.log_diag[j]));
  }
  std::vector<std::size_t> perm_target(d);  // (P v)_{perm_target[i]} = v_i
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (b.permutation.at(j, i) == 1.0) perm_target[i] = j;

  const auto [cb, ce] = condition_range(d, b.transforms_upper_half);
  const auto [ab, ae] = active_range(d, b.transforms_upper_half);
  const std::size_t m = ae - ab;
  std::vector<T> u(d), l(d), sa, sb, out;

  for (std::size_t i = 0; i < n; ++i) {
    T* row = x.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] = row[j] * scale[j] + bias[j];
    // z = P L U x
    for (std::size_t r = 0; r < d; ++r) {
      T acc = diag[r] * row[r];
      for (std::size_t c = r + 1; c < d; ++c) acc += static_cast<T>(b.upper.at(r, c)) * row[c];
      u[r] = acc;
    }
    for (std::size_t r = 0; r < d; ++r) {
      T acc = u[r];
      for (std::size_t c = 0; c < r; ++c) acc += static_cast<T>(b.lower.at(r, c)) * u[c];
      l[r] = acc;
    }
    for (std::size_t r = 0; r < d; ++r) row[perm_target[r]] = l[r];

    subnet_eval(b, row + cb, ce - cb, sa, sb, out);
    double ls_sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const T ls = clamp * std::tanh(out[j]);
      row[ab + j] = row[ab + j] * std::exp(ls) + out[m + j];
      ls_sum += static_cast<double>(ls);
    }
    logdet[i] += constant + ls_sum;
  }
}

template <typename T>
void block_inverse(const FlowModel& model, const FlowBlock& b, Rows<T>& z) {
  const std::size_t n = z.n, d = z.d;
  const T clamp = static_cast<T>(model.config().clamp);
  std::vector<T> inv_scale(d), bias(d), diag(d);
  for (std::size_t j = 0; j < d; ++j) {
    inv_scale[j] = static_cast<T>(std::exp(-b.actnorm_log_scale[j]));
    bias[j] = static_cast<T>(b.actnorm_bias[j]);
    diag[j] = static_cast<T>(b.sign[j] * std::exp(b.log_diag[j]));
  }
  std::vector<std::size_t> perm_target(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (b.permutation.at(j, i) == 1.0) perm_target[i] = j;

  const auto [cb, ce] = condition_range(d, b.transforms_upper_half);
  const auto [ab, ae] = active_range(d, b.transforms_upper_half);
  const std::size_t m = ae - ab;
  std::vector<T> u(d), l(d), sa, sb, out;

  for (std::size_t i = 0; i < n; ++i) {
    T* row = z.row(i);
    subnet_eval(b, row + cb, ce - cb, sa, sb, out);
    for (std::size_t j = 0; j < m; ++j) {
      const T ls = clamp * std::tanh(out[j]);
      row[ab + j] = (row[ab + j] - out[m + j]) * std::exp(-ls);
    }
    for (std::size_t r = 0; r < d; ++r) l[r] = row[perm_target[r]];
    for (std::size_t r = 0; r < d; ++r) {
      T acc = l[r];
      for (std::size_t c = 0; c < r; ++c) acc -= static_cast<T>(b.lower.at(r, c)) * u[c];
      u[r] = acc;
    }
    for (std::size_t r = d; r-- > 0;) {
      T acc = u[r];
      for (std::size_t c = r + 1; c < d; ++c) acc -= static_cast<T>(b.upper.at(r, c)) * row[c];
      row[r] = acc / diag[r];
    }
    for (std::size_t j = 0; j < d; ++j) row[j] = (row[j] - bias[j]) * inv_scale[j];
  }
}

void require_width(const FlowModel& model, const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.cols() != model.dim()) {
    throw DimensionError(std::string(what) + ": expected n x " + std::to_string(model.dim()) + ", got " +
                         shape_string(t.shape()));
  }
  if (!t.all_finite()) throw DomainError(std::string(what) + ": input contains NaN/Inf");
}

template <typename T>
ForwardResult forward_impl(const FlowModel& model, const Tensor& e) {
  Rows<T> x = from_tensor<T>(e);
  std::vector<double> logdet(x.n, 0.0);
  for (const auto& b : model.blocks()) block_forward(model, b, x, logdet);
  check_finite_rows(x, "flow forward");
  return {to_tensor(x), std::move(logdet)};
}

template <typename T>
Tensor inverse_impl(const FlowModel& model, const Tensor& z) {
  Rows<T> x = from_tensor<T>(z);
  for (std::size_t i = model.blocks().size(); i-- > 0;) block_inverse(model, model.blocks()[i], x);
  check_finite_rows(x, "flow inverse");
  return to_tensor(x);
}

}  // namespace

ForwardResult forward(const FlowModel& model, const Tensor& e, Precision precision) {
  if (!model.actnorm_initialized()) throw StateError("flow forward before actnorm initialization");
  require_width(model, e, "forward");
  return precision == Precision::f32 ? forward_impl<float>(model, e) : forward_impl<double>(model, e);
}

Tensor inverse(const FlowModel& model, const Tensor& z, Precision precision) {
  if (!model.actnorm_initialized()) throw StateError("flow inverse before actnorm initialization");
  require_width(model, z, "inverse");
  return precision == Precision::f32 ? inverse_impl<float>(model, z) : inverse_impl<double>(model, z);
}

ForwardResult forward_block(const FlowModel& model, std::size_t block, const Tensor& x) {
  require_width(model, x, "forward_block");
  Rows<double> r = from_tensor<double>(x);
  std::vector<double> logdet(r.n, 0.0);
  block_forward(model, model.blocks().at(block), r, logdet);
  return {to_tensor(r), std::move(logdet)};
}

Tensor inverse_block(const FlowModel& model, std::size_t block, const Tensor& z) {
  require_width(model, z, "inverse_block");
  Rows<double> r = from_tensor<double>(z);
  block_inverse(model, model.blocks().at(block), r);
  return to_tensor(r);
}

void init_actnorm(FlowModel& model, const Tensor& first_batch) {
  require_width(model, first_batch, "init_actnorm");
  const std::size_t n = first_batch.rows(), d = model.dim();
  if (n < 2) throw InsufficientBatchError("actnorm initialization needs at least 2 samples");
  Tensor x = first_batch;
  for (std::size_t bi = 0; bi < model.blocks().size(); ++bi) {
    FlowBlock& b = model.blocks()[bi];
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += x.at(i, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
      var /= static_cast<double>(n);
      const double sd = std::sqrt(var);
      if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
        throw DegenerateDataError("actnorm init: dimension " + std::to_string(j) + " of block " + std::to_string(bi) +
                                  " has zero variance");
      }
      b.actnorm_log_scale[j] = -std::log(sd);
      b.actnorm_bias[j] = -mean / sd;
    }
    x = forward_block(model, bi, x).z;
  }
  model.mark_actnorm_initialized();
}

// ---------------------------------------------------------------------------
// Graph path.

BoundFlow::BoundFlow(const FlowModel& model, ad::Graph& graph, bool trainable) : model_(&model), graph_(&graph) {
  const std::size_t d = model.dim();
  Tensor lower_mask = Tensor::zeros({d, d});
  Tensor upper_mask = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      if (j < i) lower_mask.at(i, j) = 1.0;
      if (j > i) upper_mask.at(i, j) = 1.0;
    }
  strict_lower_mask_ = graph.constant(std::move(lower_mask));
  strict_upper_mask_ = graph.constant(std::move(upper_mask));
  identity_ = graph.constant(Tensor::identity(d));
  ones_column_ = graph.constant(Tensor::full({d, 1}, 1.0));

  auto leaf = [&](const Tensor& t) {
    if (!trainable) return graph.constant(t);
    ad::Var v = graph.variable(t);
    trainable_vars_.push_back(v);
    return v;
  };
  for (const auto& b : model.blocks()) {
    BlockVars bv;
    bv.log_scale = leaf(b.actnorm_log_scale);
    bv.bias = leaf(b.actnorm_bias);
    bv.permutation = graph.constant(b.permutation);
    bv.lower = leaf(b.lower);
    bv.upper = leaf(b.upper);
    bv.log_diag = leaf(b.log_diag);
    bv.sign = graph.constant(b.sign);
    for (const auto& layer : b.subnet) {
      ad::Var w = leaf(layer.weight);
      ad::Var bias = leaf(layer.bias);
      bv.layers.emplace_back(w, bias);
    }
    bv.transforms_upper_half = b.transforms_upper_half;
    blocks_.push_back(std::move(bv));
  }
}

BoundFlow::Output BoundFlow::forward(ad::Var e) const {
  using namespace ad;
  if (!model_->actnorm_initialized()) throw StateError("flow forward before actnorm initialization");
  const std::size_t d = model_->dim();
  if (e.value().rank() != 2 || e.cols() != d) {
    throw DimensionError("flow forward: expected n x " + std::to_string(d) + ", got " + shape_string(e.shape()));
  }
  const double clamp = model_->config().clamp;
  Var x = e;
  Var constant_logdet;
  Var sample_logdet;

  for (const auto& b : blocks_) {
    x = mul(x, exp(b.log_scale)) + b.bias;
    Var block_const = sum(b.log_scale) + sum(b.log_diag);
    constant_logdet = constant_logdet.valid() ? constant_logdet + block_const : block_const;

    Var lower = mul(b.lower, strict_lower_mask_) + identity_;
    Var diag = mul(matmul(ones_column_, mul(b.sign, exp(b.log_diag))), identity_);
    Var upper = mul(b.upper, strict_upper_mask_) + diag;
    Var w = matmul(b.permutation, matmul(lower, upper));
    x = matmul(x, transpose(w));

    const auto [cb, ce] = condition_range(d, b.transforms_upper_half);
    const auto [ab, ae] = active_range(d, b.transforms_upper_half);
    const std::size_t m = ae - ab;
    Var cond = slice(x, cb, ce);
    Var active = slice(x, ab, ae);
    Var h = cond;
    for (std::size_t l = 0; l < b.layers.size(); ++l) {
      h = matmul(h, b.layers[l].first) + b.layers[l].second;
      if (l + 1 < b.layers.size()) h = tanh(h);
    }
    Var log_s = scale(tanh(slice(h, 0, m)), clamp);
    Var shift = slice(h, m, 2 * m);
    active = mul(active, exp(log_s)) + shift;
    Var per_sample = row_sums(log_s);
    sample_logdet = sample_logdet.valid() ? sample_logdet + per_sample : per_sample;
    x = b.transforms_upper_half ? concat(cond, active) : concat(active, cond);
  }
  return {x, add(sample_logdet, constant_logdet)};
}

}  // namespace fairlatent
