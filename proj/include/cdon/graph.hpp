#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "cdon/tensor.hpp"

namespace cdon {

/// Handle to a node recorded on a Graph.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

/// Explicit per-forward-pass record of operations for reverse-mode
/// differentiation.
///
/// Nodes are appended in execution order, so the node list is already
/// topologically sorted; backward() walks it once in reverse. A Graph is
/// single-threaded; independent evaluations use independent graphs.
class Graph {
 public:
  /// Receives the gradient w.r.t. the node output and accumulates into the
  /// gradients of the node inputs via Graph::grad().
  using BackwardFn = std::function<void(Graph&, const Tensor4& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Leaf that never receives a gradient.
  Var constant(Tensor4 value);
  /// Leaf that receives a gradient (not bound to an external tensor).
  Var variable(Tensor4 value);
  /// Leaf bound to an external parameter: backward() adds the node gradient
  /// into `p`'s grad slot. Binding the same tensor twice returns the same node.
  Var param(Tensor4& p);

  /// Records an op output. `fn` is dropped when no input needs a gradient.
  Var record(Tensor4 value, const std::vector<Var>& inputs, BackwardFn fn, const char* op);

  const Tensor4& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  /// Gradient buffer of `v`, zero-allocated on first access.
  Tensor4& grad(Var v);
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }
  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(Var v) const { return nodes_.at(v.id).op; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  /// Throws UsageError unless `loss` holds exactly one element.
  void backward(Var loss);

 private:
  struct Node {
    Tensor4 value;
    Tensor4 grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor4* bound = nullptr;
    bool needs_grad = false;
    std::string op;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor4*, std::size_t> bound_;
};

}  // namespace cdon
