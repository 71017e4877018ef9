// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "svrecon/tensor.hpp"

namespace svrecon {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t numel() const { return value().numel(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Define-by-run gradient record. Nodes are appended in evaluation order, so a
/// node's inputs always precede it and a single reverse sweep is a valid
/// topological traversal.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push("constant", std::move(value), {}, nullptr, false); }

  Var leaf(Tensor value) { return push("leaf", std::move(value), {}, nullptr, true); }

  /// Records an op result. `backward` is dropped when no input needs a gradient.
  Var record(std::string_view op, Tensor value, std::vector<int> inputs, Backward backward) {
    bool needs = false;
    for (int in : inputs) needs = needs || nodes_.at(static_cast<std::size_t>(in)).requires_grad;
    return push(op, std::move(value), std::move(inputs), needs ? std::move(backward) : Backward{}, needs);
  }

  /// Reverse sweep from a scalar root. Gradients accumulate across calls until
  /// zero_grad().
  void backward(Var root) {
    check_owner(root);
    Node& r = node(root.id);
    if (r.value.numel() != 1)
      throw DimensionError("backward() requires a scalar root, got " + shape_string(r.value.shape));
    if (!r.requires_grad) return;
    grad(root.id)[0] += 1.0;
    for (int id = root.id; id >= 0; --id) {
      Node& n = node(id);
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, id);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad.clear();
  }

  const Tensor& value(int id) const { return node(id).value; }
  bool requires_grad(int id) const { return node(id).requires_grad; }
  std::string_view op(int id) const { return node(id).op; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<int>& inputs(int id) const { return node(id).inputs; }

  /// Gradient accumulator for a node, zero-initialized on first access.
  std::vector<double>& grad(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
    return n.grad;
  }

  /// Accumulator of an input if it participates in differentiation, else null.
  double* grad_if_needed(int id) {
    Node& n = node(id);
    return n.requires_grad ? grad(id).data() : nullptr;
  }

  /// Gradient of a node as a tensor of its shape (zeros if never reached).
  Tensor gradient(Var v) {
    check_owner(v);
    return Tensor(node(v.id).value.shape, grad(v.id));
  }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    std::vector<double> grad;
    std::vector<int> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  Var push(std::string_view op, Tensor value, std::vector<int> inputs, Backward backward, bool needs) {
    if (!value.all_finite()) throw NumericalError("non-finite value produced by op '" + std::string(op) + "'");
    nodes_.push_back(Node{op, std::move(value), {}, std::move(inputs), std::move(backward), needs});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  void check_owner(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw Error("variable does not belong to this tape");
  }

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {
inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw Error("operands recorded on different tapes");
  return *a.tape;
}
}  // namespace detail

}  // namespace svrecon
