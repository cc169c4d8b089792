#include "fairlatent/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fairlatent/errors.hpp"

namespace fairlatent::ad {

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::constant(Tensor value) { return record("constant", std::move(value), {}, nullptr); }

Var Graph::variable(Tensor value) {
  Var v = record("variable", std::move(value), {}, nullptr);
  nodes_[v.id()].requires_grad = true;
  return v;
}

Var Graph::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw DomainError("non-finite value produced by '" + std::string(op) + "'");
  }
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.graph() != this) throw ContractError("operands belong to different graphs");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor::zeros(n.value.shape());
  return n.grad;
}

void Graph::backward(Var root) {
  if (&root.graph() != this) throw ContractError("backward root belongs to another graph");
  if (nodes_[root.id()].value.size() != 1) {
    throw ContractError("backward needs a single-valued root, got shape " +
                        shape_string(nodes_[root.id()].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

namespace {

enum class Broadcast { same, scalar, row };

Broadcast classify(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()));
}

inline double bval(const Tensor& b, Broadcast mode, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Broadcast::same:
      return b[i];
    case Broadcast::scalar:
      return b[0];
    case Broadcast::row:
      return b[i % cols];
  }
  return 0.0;
}

/// Adds `g` (shaped like the broadcast result) into the gradient of `b`.
void reduce_into(Tensor& gb, const Tensor& g, Broadcast mode, double sign = 1.0) {
  const std::size_t cols = g.cols();
  for (std::size_t i = 0; i < g.size(); ++i) {
    switch (mode) {
      case Broadcast::same:
        gb[i] += sign * g[i];
        break;
      case Broadcast::scalar:
        gb[0] += sign * g[i];
        break;
      case Broadcast::row:
        gb[i % cols] += sign * g[i];
        break;
    }
  }
}

void require_rank2(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
}

template <typename Fwd, typename Deriv>
Var unary(Var a, std::string_view op, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return a.graph().record(op, std::move(out), {a}, [deriv](Graph& g, std::size_t self) {
    const std::size_t in = g.input(self, 0);
    if (!g.needs_grad(in)) return;
    const Tensor& x = g.value(in);
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad_of(self);
    Tensor& gx = g.grad_buffer(in);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * bv[p * m + j];
    }
  }
  return a.graph().record("matmul", std::move(out), {a, b}, [n, k, m](Graph& g, std::size_t self) {
    const std::size_t ia = g.input(self, 0), ib = g.input(self, 1);
    const Tensor& gy = g.grad_of(self);
    if (g.needs_grad(ia)) {
      const Tensor& bv = g.value(ib);
      Tensor& ga = g.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += gy[i * m + j] * bv[p * m + j];
          ga[i * k + p] += acc;
        }
    }
    if (g.needs_grad(ib)) {
      const Tensor& av = g.value(ia);
      Tensor& gb = g.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * gy[i * m + j];
        }
    }
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = classify(av, bv, "add");
  const std::size_t cols = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bval(bv, mode, i, cols);
  return a.graph().record("add", std::move(out), {a, b}, [mode](Graph& g, std::size_t self) {
    const std::size_t ia = g.input(self, 0), ib = g.input(self, 1);
    const Tensor& gy = g.grad_of(self);
    if (g.needs_grad(ia)) reduce_into(g.grad_buffer(ia), gy, Broadcast::same);
    if (g.needs_grad(ib)) reduce_into(g.grad_buffer(ib), gy, mode);
  });
}

Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = classify(av, bv, "sub");
  const std::size_t cols = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bval(bv, mode, i, cols);
  return a.graph().record("sub", std::move(out), {a, b}, [mode](Graph& g, std::size_t self) {
    const std::size_t ia = g.input(self, 0), ib = g.input(self, 1);
    const Tensor& gy = g.grad_of(self);
    if (g.needs_grad(ia)) reduce_into(g.grad_buffer(ia), gy, Broadcast::same);
    if (g.needs_grad(ib)) reduce_into(g.grad_buffer(ib), gy, mode, -1.0);
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = classify(av, bv, "mul");
  const std::size_t cols = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bval(bv, mode, i, cols);
  return a.graph().record("mul", std::move(out), {a, b}, [mode, cols](Graph& g, std::size_t self) {
    const std::size_t ia = g.input(self, 0), ib = g.input(self, 1);
    const Tensor& gy = g.grad_of(self);
    const Tensor& av = g.value(ia);
    const Tensor& bv = g.value(ib);
    if (g.needs_grad(ia)) {
      Tensor& ga = g.grad_buffer(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bval(bv, mode, i, cols);
    }
    if (g.needs_grad(ib)) {
      Tensor prod = gy;
      for (std::size_t i = 0; i < prod.size(); ++i) prod[i] *= av[i];
      reduce_into(g.grad_buffer(ib), prod, mode);
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return a.graph().record("scale", std::move(out), {a}, [factor](Graph& g, std::size_t self) {
    const std::size_t in = g.input(self, 0);
    if (!g.needs_grad(in)) return;
    const Tensor& gy = g.grad_of(self);
    Tensor& gx = g.grad_buffer(in);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * gy[i];
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += offset;
  return a.graph().record("add_scalar", std::move(out), {a}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.input(self, 0);
    if (!g.needs_grad(in)) return;
    reduce_into(g.grad_buffer(in), g.grad_of(self), Broadcast::same);
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.graph().record("sum", Tensor::scalar(total), {a}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.input(self, 0);
    if (!g.needs_grad(in)) return;
    const double gy = g.grad_of(self)[0];
    Tensor& gx = g.grad_buffer(in);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "transpose");
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return a.graph().record("transpose", std::move(out), {a}, [r, c](Graph& g, std::size_t self) {
    const std::size_t in = g.input(self, 0);
    if (!g.needs_grad(in)) return;
    const Tensor& gy = g.grad_of(self);
    Tensor& gx = g.grad_buffer(in);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[j * r + i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  if (parts.size() > 2) {
    Var acc = concat(parts.subspan(0, 2));
    for (std::size_t k = 2; k < parts.size(); ++k) acc = concat(acc, parts[k]);
    return acc;
  }
  const std::size_t n = parts.front().value().rows();
  std::size_t width = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    require_rank2(p.value(), "concat");
    if (p.value().rows() != n) throw DimensionError("concat: row counts differ");
    offsets.push_back(width);
    width += p.value().cols();
  }
  Tensor out = Tensor::zeros({n, width});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out[i * width + offsets[k] + j] = pv[i * pv.cols() + j];
  }
  Graph& graph = parts.front().graph();
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  auto backward = [ids, offsets, n, width](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!g.needs_grad(ids[k])) continue;
      Tensor& gx = g.grad_buffer(ids[k]);
      const std::size_t w = gx.cols();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * w + j] += gy[i * width + offsets[k] + j];
    }
  };
  if (parts.size() == 1) return graph.record("concat", std::move(out), {parts[0]}, backward);
  return graph.record("concat", std::move(out), {parts[0], parts[1]}, backward);
}

Var concat(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat(std::span<const Var>(parts));
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_rank2(av, "slice");
  if (begin >= end || end > av.cols()) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_string(av.shape()));
  }
  const std::size_t c = av.cols();
  return a.graph().record("slice", slice_columns(av, begin, end), {a}, [begin, end, c](Graph& g, std::size_t self) {
    const std::size_t in = g.input(self, 0);
    if (!g.needs_grad(in)) return;
    const Tensor& gy = g.grad_of(self);
    Tensor& gx = g.grad_buffer(in);
    const std::size_t w = end - begin;
    for (std::size_t i = 0; i < gx.rows(); ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += gy[i * w + j];
  });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  for (double v : a.value().data()) {
    if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
  }
  return unary(
      a, "sqrt", [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var l2_norm(Var a) {
  double ss = 0.0;
  for (double v : a.value().data()) ss += v * v;
  return a.graph().record("l2_norm", Tensor::scalar(std::sqrt(ss)), {a}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.input(self, 0);
    if (!g.needs_grad(in)) return;
    const double norm = g.value(self)[0];
    if (norm == 0.0) return;
    const double gy = g.grad_of(self)[0];
    const Tensor& x = g.value(in);
    Tensor& gx = g.grad_buffer(in);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy * x[i] / norm;
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = logits.value();
  require_rank2(lv, "softmax_cross_entropy");
  const std::size_t n = lv.rows(), c = lv.cols();
  if (targets.size() != n) throw DimensionError("softmax_cross_entropy: target count differs from batch size");
  Tensor probs = Tensor::zeros({n, c});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw DimensionError("softmax_cross_entropy: target " + std::to_string(t) + " outside [0," +
                           std::to_string(c) + ")");
    }
    auto row = lv.row_span(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
    total += lse - row[static_cast<std::size_t>(t)];
  }
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.graph().record("softmax_cross_entropy", Tensor::scalar(total / static_cast<double>(n)), {logits},
                               [probs = std::move(probs), tg = std::move(tg), n, c](Graph& g, std::size_t self) {
                                 const std::size_t in = g.input(self, 0);
                                 if (!g.needs_grad(in)) return;
                                 const double gy = g.grad_of(self)[0] / static_cast<double>(n);
                                 Tensor& gx = g.grad_buffer(in);
                                 for (std::size_t i = 0; i < n; ++i) {
                                   for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy * probs[i * c + j];
                                   gx[i * c + static_cast<std::size_t>(tg[i])] -= gy;
                                 }
                               });
}

Var row_sums(Var a) {
  Var ones = a.graph().constant(Tensor::full({a.value().cols(), 1}, 1.0));
  return matmul(a, ones);
}

Var column_means(Var a) {
  const std::size_t n = a.value().rows();
  Var w = a.graph().constant(Tensor::full({1, n}, 1.0 / static_cast<double>(n)));
  return matmul(w, a);
}

}  // namespace fairlatent::ad
