#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "fairlatent/tensor.hpp"

namespace fairlatent::ad {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while its Graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the tape is
/// always topologically sorted and backward() is a single reverse sweep.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient of the last backward() root with respect to `v`; zeros if `v`
  /// did not influence the root.
  Tensor grad(Var v) const;

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must hold a single value.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Appends a node. Throws DomainError when `value` holds NaN/Inf.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  /// Mutable gradient buffer for node `id`, zero-initialized on first use.
  Tensor& grad_buffer(std::size_t id);
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t input(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

// Primitive set. Binary elementwise ops accept same-shape operands, a scalar
// right operand, or a 1 x cols row vector broadcast over the rows of `a`.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var sum(Var a);
Var mean(Var a);
Var transpose(Var a);
/// Column-wise concatenation of rank-2 tensors with equal row counts.
Var concat(std::span<const Var> parts);
Var concat(Var a, Var b);
/// Columns [begin, end).
Var slice(Var a, std::size_t begin, std::size_t end);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var tanh(Var a);
Var relu(Var a);
Var square(Var a);
/// Euclidean norm of all entries; gradient at the origin is taken as zero.
Var l2_norm(Var a);
/// Mean softmax cross-entropy of `logits` (n x classes) against class indices.
Var softmax_cross_entropy(Var logits, std::span<const int> targets);

// Composites built from the primitives above.
Var row_sums(Var a);       // n x k -> n x 1
Var column_means(Var a);   // n x k -> 1 x k

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace fairlatent::ad
