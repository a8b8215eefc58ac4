#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "ctrnas/tensor.hpp"

namespace ctrnas {

/// Counts scalar multiplies and adds executed by the kernels (a multiply-add is 2).
struct FlopCounter {
  std::uint64_t flops = 0;
};

/// A trainable array plus its gradient accumulator. `touched` records whether
/// the last backward pass reached it; untouched parameters are skipped by Adam.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool touched = false;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape) {}
  void zero_grad();
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Value {
 public:
  Value() = default;
  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }

 private:
  friend class Graph;
  Value(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

enum class Activation { Identity, Relu, Sigmoid };

/// Reverse-mode tape. Nodes are appended in evaluation order, so every
/// node's inputs have smaller ids and the graph is acyclic by construction.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(FlopCounter* counter = nullptr) : counter_(counter) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Value constant(Tensor t);
  Value scalar(double v) { return constant(Tensor({1}, v)); }
  /// Free leaf that receives a gradient (used for input-gradient checks and logits).
  Value variable(Tensor t);
  /// Binds a parameter; binding the same parameter twice returns the same node.
  Value param(Parameter& p);

  const Tensor& value(Value v) const { return nodes_.at(static_cast<std::size_t>(v.id())).value; }
  /// Gradient from the last backward pass; zero for differentiable nodes the
  /// loss does not depend on.
  const Tensor& grad(Value v) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  bool is_constant(Value v) const { return !needs_grad(v.id()); }
  /// True when v is a constant whose every entry equals x.
  bool is_constant_fill(Value v, double x) const;
  std::size_t node_count() const { return nodes_.size(); }

  /// Accumulates d(loss)/d(node) for every node reachable from a scalar loss.
  /// Parameter gradients are added into Parameter::grad.
  void backward(Value loss);

  // Kernel-facing API.
  Value push(Tensor value, std::vector<int> inputs, BackwardFn fn);
  Tensor& grad_of(int id);
  const Tensor& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  void count(std::uint64_t flops) {
    if (counter_ != nullptr) counter_->flops += flops;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> bound_;
  FlopCounter* counter_;
};

// ---- differentiable operations -------------------------------------------
// All ops take and return Values living in the same Graph. Shape violations
// raise DimensionError.

/// y = a * w (+ bias). a: [B x K], w: [K x M], bias: [M].
Value matmul(Value a, Value w, std::optional<Value> bias = std::nullopt);
/// Per-batch matrix product. a: [B x N x D], b: [B x D x M] -> [B x N x M].
Value bmm(Value a, Value b);
/// Swaps the last two axes of a 3D tensor.
Value transpose12(Value a);
/// Projection over the middle axis: y[b,m,d] = sum_n w[m,n] x[b,n,d] + bias[m].
Value mix_middle(Value x, Value w, std::optional<Value> bias = std::nullopt);
/// Layer normalization over the last axis followed by an activation.
/// With `weights` (length = last axis) the mean and variance are weighted
/// averages; zero weights exclude an entry from the statistics.
Value layer_norm_act(Value x, Value gain, Value bias, Activation act,
                     std::optional<Value> weights = std::nullopt, double eps = 1e-5);
/// Right-pads every input (rank 1 or 2, equal leading dims) with zeros to the
/// widest last axis (at least min_width) and sums element-wise.
Value zero_pad_sum(std::span<const Value> xs, std::size_t min_width = 0);
/// Concatenation along the last axis (rank 1 or 2).
Value concat_last(std::span<const Value> xs);
/// Concatenation of 3D tensors along the middle axis.
Value concat_mid(std::span<const Value> xs);
Value reshape(Value x, Shape s);
/// Multiplies x by vector v broadcast along `axis` (v.size == x.shape[axis]).
Value scale_axis(Value x, Value v, std::size_t axis);
/// Multiplies x by a scalar Value of shape [1].
Value scale(Value x, Value s);
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value add_scalar(Value x, double c);
Value mul_scalar(Value x, double c);
Value sigmoid(Value x);
Value relu(Value x);
Value log(Value x);
Value abs(Value x);
Value sum(Value x);
Value mean(Value x);
/// Softmax of a rank-1 tensor.
Value softmax(Value x);
/// Mean binary cross entropy of logits [B x 1] against 0/1 labels (stable form).
Value bce_with_logits(Value logits, std::span<const double> labels);
/// Each entry of a rank-1 tensor repeated `times` times consecutively.
Value repeat_each(Value v, std::size_t times);
/// Row-major flattened outer product of two rank-1 tensors.
Value outer_flat(Value a, Value b);
/// Entry k of a rank-1 tensor as shape [1].
Value pick(Value v, std::size_t k);

Value apply_activation(Value x, Activation act);

}  // namespace ctrnas
