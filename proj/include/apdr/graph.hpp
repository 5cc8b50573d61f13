#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "apdr/errors.hpp"
#include "apdr/tensor.hpp"

namespace apdr {

// Handle to a node of a Graph.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
// is already a topological order and backward() is a single reverse sweep.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T>* param = nullptr;
    bool needs_grad = false;
    Buffer<T> grad;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  Var constant(Tensor<T> value, std::string label = "input") {
    Node n;
    n.op = std::move(label);
    n.value = std::move(value);
    return push(std::move(n));
  }

  // References `p` without copying; gradients are summed into p.grad on
  // backward() when p.requires_grad is set. `p` must outlive the graph.
  Var parameter(Tensor<T>& p, std::string label = "param") {
    Node n;
    n.op = std::move(label);
    n.external = &p;
    n.param = &p;
    n.needs_grad = p.requires_grad;
    return push(std::move(n));
  }

  Var record(std::string op, const std::vector<Var>& inputs, Tensor<T> value, BackwardFn fn) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    for (auto v : inputs) {
      check(v);
      n.inputs.push_back(v.id);
      n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Tensor<T>& value(Var v) const {
    check(v);
    return value_of(v.id);
  }
  const Tensor<T>& value_of(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  // Upstream gradient of node `id`; valid inside a backward callback.
  const Buffer<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  // Gradient sink for input node `id`, or nullptr when it does not need one.
  T* sink(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (n.grad.empty()) n.grad.assign(value_of(id).numel(), T(0));
    return n.grad.data();
  }

  // Gradient accumulated on `v` by the last backward(), empty if unreached.
  const Buffer<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  void backward(Var loss) {
    check(loss);
    if (value(loss).numel() != 1) {
      throw InputError("backward() needs a scalar loss, got shape " + shape_str(value(loss).shape));
    }
    for (auto& n : nodes_) n.grad.clear();
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad.assign(1, T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param && n.param->requires_grad) {
        auto& g = n.param->grad;
        if (g.empty()) g.assign(n.param->numel(), T(0));
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  std::size_t count_op(const std::string& op) const {
    std::size_t c = 0;
    for (const auto& n : nodes_) c += (n.op == op);
    return c;
  }

  // Label of the first node whose value holds a NaN or Inf, or "" if none.
  std::string first_non_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      for (T x : value_of(i).data) {
        if (!std::isfinite(x)) return nodes_[i].op + " (node " + std::to_string(i) + ")";
      }
    }
    return {};
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }
  void check(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw InternalError("invalid graph variable");
  }

  std::vector<Node> nodes_;
};

}  // namespace apdr
