#include <algorithm>

#include "ctrnas/autodiff.hpp"
#include "ctrnas/errors.hpp"

namespace ctrnas {

void Parameter::zero_grad() {
  if (grad.shape != value.shape) grad = Tensor(value.shape);
  std::fill(grad.data.begin(), grad.data.end(), 0.0);
  touched = false;
}

const Tensor& Value::value() const { return graph_->value(*this); }

Value Graph::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Value(this, static_cast<int>(nodes_.size() - 1));
}

Value Graph::variable(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Value(this, static_cast<int>(nodes_.size() - 1));
}

Value Graph::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Value(this, it->second);
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  bound_.emplace(&p, id);
  return Value(this, id);
}

const Tensor& Graph::grad(Value v) const {
  const auto& n = nodes_.at(static_cast<std::size_t>(v.id()));
  if (n.grad.shape != n.value.shape) throw InternalError("gradient requested for a node outside the backward pass");
  return n.grad;
}

bool Graph::is_constant_fill(Value v, double x) const {
  if (needs_grad(v.id())) return false;
  const auto& d = value(v).data;
  return std::all_of(d.begin(), d.end(), [x](double e) { return e == x; });
}

Value Graph::push(Tensor value, std::vector<int> inputs, BackwardFn fn) {
  Node n;
  const int self = static_cast<int>(nodes_.size());
  for (int in : inputs) {
    if (in < 0 || in >= self) throw InternalError("graph input refers to a later node (cycle)");
    n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
  }
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Value(this, self);
}

Tensor& Graph::grad_of(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.shape != n.value.shape) n.grad = Tensor(n.value.shape);
  return n.grad;
}

void Graph::backward(Value loss) {
  if (loss.graph() != this) throw InternalError("loss belongs to a different graph");
  if (value(loss).size() != 1) throw DimensionError("backward requires a scalar loss, got " + shape_string(value(loss).shape));
  for (auto& n : nodes_) n.grad = Tensor{};
  grad_of(loss.id()).data[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.shape != n.value.shape) continue;
    for (int in : n.inputs)
      if (in >= id) throw InternalError("cycle detected during backward");
    if (n.backward) {
      auto fn = n.backward;  // node storage may not move during backward, but keep a copy for safety
      fn(*this, id);
    }
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr || n.grad.shape != n.value.shape) continue;
    auto& pg = n.param->grad;
    if (pg.shape != n.param->value.shape) pg = Tensor(n.param->value.shape);
    for (std::size_t i = 0; i < pg.size(); ++i) pg.data[i] += n.grad.data[i];
    n.param->touched = true;
  }
  // Differentiable nodes the loss does not depend on have a zero gradient.
  for (int id = 0; id <= loss.id(); ++id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad && n.grad.shape != n.value.shape) n.grad = Tensor(n.value.shape);
  }
}

}  // namespace ctrnas
