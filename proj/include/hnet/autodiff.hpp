#pragma once

// Define-by-run reverse-mode differentiation. A Graph is an append-only list of
// nodes; every node's inputs were appended before it, so construction order is
// a topological order and backpropagation simply walks it in reverse.

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hnet/errors.hpp"
#include "hnet/tensor.hpp"

namespace hnet {

/// A trainable tensor with its gradient and RMSprop accumulator.
template <class T>
struct Parameter {
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), opt_state(value.shape()) {}

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> opt_state;
  std::size_t updates = 0;  // optimizer steps applied; instrumentation only
};

/// Owns parameters with stable addresses, in insertion order.
template <class T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Parameter<T>>(std::move(name), std::move(value)));
    return *params_.back();
  }

  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter<T>* find(std::string_view name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  /// Total scalar count over all (unique) storages.
  std::size_t element_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

template <class T>
void zero_grads(ParameterSet<T>& params) {
  for (auto& p : params) p->grad.fill(T{0});
}

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  struct Node {
    std::string_view kind;
    Tensor<T> value;
    Tensor<T> grad;  // empty until something flows into it
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    bool leaf = false;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient (data, targets).
  Var constant(Tensor<T> value) { return push_leaf("constant", std::move(value), false, nullptr); }

  /// Leaf whose gradient is retained after backpropagate (input sensitivity).
  Var input(Tensor<T> value) { return push_leaf("input", std::move(value), true, nullptr); }

  /// Leaf bound to a parameter. Repeated uses of one parameter share a node,
  /// so every path's contribution lands in the same gradient.
  Var param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
    Var v = push_leaf("param", p.value, true, &p);
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  /// Appends an operation node. `backward` receives this graph and the node id;
  /// it reads grad(self) and accumulates into the inputs that require grad.
  Var record(std::string_view kind, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node node;
    node.kind = kind;
    node.value = std::move(value);
    for (auto in : inputs) {
      if (in >= nodes_.size()) throw ContractError("graph input refers to a future node");
      node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    node.inputs = std::move(inputs);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  Tensor<T>& grad(Var v) { return grad(v.id); }
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

  /// Node ids visited by the most recent backpropagate, in visiting order.
  const std::vector<std::size_t>& last_backward_order() const noexcept { return visit_log_; }

  /// d(loss)/d(param) is added (+=) into every reachable Parameter's grad.
  void backpropagate(Var loss) {
    if (!loss.valid() || loss.id >= nodes_.size()) throw ContractError("backpropagate: invalid loss node");
    if (nodes_[loss.id].value.shape() != scalar_shape())
      throw ContractError("backpropagate: loss node is not scalar, shape " + nodes_[loss.id].value.shape().str());
    for (auto& n : nodes_) n.grad = Tensor<T>();
    visit_log_.clear();
    grad(loss.id).fill(T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.requires_grad) continue;
      visit_log_.push_back(i);
      if (n.leaf) {
        if (n.param != nullptr) n.param->grad += n.grad;
        continue;
      }
      if (n.backward) n.backward(*this, i);
      n.grad = Tensor<T>();  // consumed; intermediate grads are not retained
    }
  }

 private:
  Var push_leaf(std::string_view kind, Tensor<T> value, bool requires_grad, Parameter<T>* p) {
    Node node;
    node.kind = kind;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.leaf = true;
    node.param = p;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // references into nodes_ must survive appends
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  std::vector<std::size_t> visit_log_;
};

template <class T>
void backpropagate(Graph<T>& graph, Var loss) {
  graph.backpropagate(loss);
}

/// Central finite differences of a tensor-to-scalar function, per element.
template <class T, class F>
Tensor<T> finite_difference_gradient(F&& f, const Tensor<T>& x, T eps) {
  Tensor<T> probe = x;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T up = static_cast<T>(f(static_cast<const Tensor<T>&>(probe)));
    probe[i] = orig - eps;
    const T down = static_cast<T>(f(static_cast<const Tensor<T>&>(probe)));
    probe[i] = orig;
    out[i] = (up - down) / (T{2} * eps);
  }
  return out;
}

}  // namespace hnet
