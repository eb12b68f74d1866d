#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Ops that see at least one
// operand with requires_grad() record their parents and a backward closure;
// backward(loss) walks the reachable graph in reverse topological order.
// A graph belongs to one thread at a time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "winnet/errors.hpp"

namespace winnet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    for (auto e : shape)
      if (e <= 0) throw ContractError("tensor extents must be positive, got " + shape_str(shape));
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
      throw ContractError("data length " + std::to_string(data.size()) + " does not match shape " +
                          shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) { return Tensor({1}, {value}, requires_grad); }

  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& vec() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }

  T item() const {
    if (node_->data.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient, or zeros when nothing has been accumulated yet.
  std::vector<T> grad() const {
    return node_->grad.empty() ? std::vector<T>(node_->data.size(), T(0)) : node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Fresh leaf holding a copy of the values.
  Tensor detach() const { return Tensor(shape(), vec(), false); }
  Tensor clone() const { return Tensor(shape(), vec(), requires_grad()); }

  const NodePtr& node() const { return node_; }
  bool same_node(const Tensor& o) const { return node_ == o.node_; }

 private:
  NodePtr node_;
};

/// Builds an op result; records the graph only if some parent tracks grads.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> parents,
                      std::function<void(detail::Node<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(data), false);
  if (!grad_enabled()) return out;
  bool track = false;
  for (const auto& p : parents) track = track || p.requires_grad();
  if (!track) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& p : parents) node.parents.push_back(p.node());
  node.backward_fn = std::move(backward);
  return out;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& parents,
                      std::function<void(detail::Node<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(data), false);
  if (!grad_enabled()) return out;
  bool track = false;
  for (const auto& p : parents) track = track || p.requires_grad();
  if (!track) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& p : parents) node.parents.push_back(p.node());
  node.backward_fn = std::move(backward);
  return out;
}

/// Reverse-mode sweep from a scalar. Leaf grads accumulate across calls;
/// intermediate grads are reset at the start of every sweep.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw ArgumentError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  using Node = detail::Node<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (!n->is_leaf()) n->grad.clear();

  auto& g = loss.node()->ensure_grad();
  g[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && !n->grad.empty()) n->backward_fn(*n);
  }
}

/// d(scalar)/d(wrt) without touching the grads of any other leaf.
template <typename T>
std::vector<T> gradient(const Tensor<T>& scalar, const Tensor<T>& wrt) {
  if (!wrt.requires_grad()) throw ArgumentError("gradient(): target does not require grad");
  using Node = detail::Node<T>;
  std::vector<std::pair<Node*, std::vector<T>>> saved;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{scalar.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->is_leaf()) saved.emplace_back(n, std::move(n->grad));
    for (auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  for (auto& [n, g] : saved) n->grad.clear();
  backward(scalar);
  std::vector<T> result = wrt.grad();
  for (auto& [n, g] : saved) n->grad = std::move(g);
  return result;
}

/// Gradient accumulation target for parent `i` of `node`.
template <typename T>
std::vector<T>* parent_grad(detail::Node<T>& node, std::size_t i) {
  auto& p = *node.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> v(t.vec().begin(), t.vec().end());
  return Tensor<To>(t.shape(), std::move(v), t.requires_grad());
}

}  // namespace winnet
