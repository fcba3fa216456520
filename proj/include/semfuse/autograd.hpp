#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "semfuse/tensor.hpp"

namespace semfuse {

/// One value in a reverse-mode computation graph.
///
/// Leaves are either constants or parameters. Interior nodes own a closure that
/// reads `grad` and accumulates into the gradients of `parents`.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  Node& parent(std::size_t i) { return *parents[i]; }
};

/// Shared handle to a graph node. Copying a Var aliases the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  static Var parameter(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient accumulated by backward(); zero-filled if none has reached this node.
  const Tensor<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  /// Scalar value of a one-element tensor.
  T item() const { return node_->value[0]; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& handle() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates an interior node. A result with no gradient-carrying parent becomes a constant.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.handle());
    node->backward_fn = std::move(fn);
  }
  return Var<T>(std::move(node));
}

/// A Var with the same value but no connection to the graph.
template <typename T>
Var<T> detach(const Var<T>& v) {
  return Var<T>::constant(v.value());
}

/// Back-propagates from a scalar root, accumulating into every reachable gradient.
template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) throw ShapeMismatch("backward() requires a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && node->grad.shape() == node->value.shape()) node->backward_fn(*node);
  }
  // Interior gradients are not needed once propagated.
  for (Node<T>* node : order)
    if (node->backward_fn) node->grad = Tensor<T>();
}

}  // namespace semfuse
