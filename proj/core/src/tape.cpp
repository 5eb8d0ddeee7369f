// SPDX-License-Identifier: Apache-2.0
#include "ppa/tape.hpp"

#include <stdexcept>

namespace ppa {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.requires_grad = grad_enabled_ && value.requires_grad();
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.requires_grad = grad_enabled_ && p.value.requires_grad();
  if (n.requires_grad) n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape != this) throw std::logic_error("operand recorded on a different tape");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Tape::grad_of(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? n.grad : Tensor::zeros(n.value.shape());
}

void Tape::backward(Var loss) {
  if (!grad_enabled_) throw std::logic_error("backward() on a tape with grad disabled");
  if (loss.tape != this) throw std::logic_error("loss recorded on a different tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw DimensionError("backward() needs a single-element loss, got shape " +
                         shape_string(nodes_[loss.id].value.shape()));
  }
  last_visits_ = 0;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] = 1.0f;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.backward) {
      n.backward(*this, id);
      ++last_visits_;
    }
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || !n.has_grad) continue;
    Tensor& dst = n.param->grad;
    if (dst.shape() != n.value.shape()) dst = Tensor::zeros(n.value.shape());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
}

}  // namespace ppa
