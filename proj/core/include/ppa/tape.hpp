// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "ppa/tensor.hpp"

namespace ppa {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode gradient record for one training step.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order; backward() walks it once in reverse. A tape created
/// with grad disabled records values only and backward() is unavailable.
/// Tapes are not shared across threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// A value that never receives gradient.
  Var constant(Tensor value);
  /// A leaf whose gradient is tracked when value.requires_grad() is set.
  Var leaf(Tensor value);
  /// Binds a parameter. The same parameter maps to the same node, so reuse
  /// across branches sums its gradient contributions.
  Var param(Parameter& p);
  /// Binds a parameter read-only; it never receives gradient.
  Var param(const Parameter& p);

  /// Records the result of an operation. The node requires grad when any
  /// input does; otherwise the backward function is dropped.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad(int id);
  /// Gradient of a node after backward(); zeros when the node got none.
  Tensor grad_of(Var v) const;
  int input(int id, int k) const { return nodes_[id].inputs[k]; }

  /// Backpropagates from a single-element node and accumulates into the
  /// grad of every bound parameter.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  /// Number of nodes whose backward function ran in the last backward().
  std::size_t last_backward_visits() const { return last_visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  std::size_t last_visits_ = 0;
};

}  // namespace ppa
