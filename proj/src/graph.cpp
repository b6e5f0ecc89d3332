#include "cdon/graph.hpp"

namespace cdon {

Var Graph::constant(Tensor4 value) {
  value.check_finite("constant");
  Node node;
  node.value = std::move(value);
  node.op = "constant";
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Graph::variable(Tensor4 value) {
  value.check_finite("variable");
  Node node;
  node.value = std::move(value);
  node.needs_grad = true;
  node.op = "variable";
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Graph::param(Tensor4& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var{it->second};
  p.check_finite("param");
  Node node;
  node.value = Tensor4(p.shape(), std::vector<real>(p.data().begin(), p.data().end()));
  node.bound = &p;
  node.needs_grad = p.requires_grad();
  node.op = "param";
  nodes_.push_back(std::move(node));
  bound_.emplace(&p, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Graph::record(Tensor4 value, const std::vector<Var>& inputs, BackwardFn fn,
                  const char* op) {
  value.check_finite(op);
  Node node;
  node.value = std::move(value);
  node.op = op;
  for (Var in : inputs) {
    if (in.id >= nodes_.size()) throw UsageError(std::string(op) + ": input not on this graph");
    node.inputs.push_back(in.id);
    node.needs_grad = node.needs_grad || nodes_[in.id].needs_grad;
  }
  if (node.needs_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Tensor4& Graph::grad(Var v) {
  Node& node = nodes_.at(v.id);
  if (node.grad.empty() && node.value.size() > 0) node.grad = Tensor4(node.value.shape(), 0);
  return node.grad;
}

void Graph::backward(Var loss) {
  if (loss.id >= nodes_.size()) throw UsageError("backward: loss not on this graph");
  if (nodes_[loss.id].value.size() != 1) {
    throw UsageError("backward: seed must be scalar, got shape " +
                     nodes_[loss.id].value.shape().str());
  }
  grad(loss)[0] = real(1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) {
      // nodes_ is never resized during backward, so `node` stays valid.
      node.backward(*this, node.grad);
    }
    if (node.bound != nullptr) {
      node.grad.check_finite("backward");
      node.bound->ensure_grad();
      auto dst = node.bound->grad();
      auto src = node.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

}  // namespace cdon
