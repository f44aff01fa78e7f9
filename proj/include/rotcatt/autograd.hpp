#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rotcatt/tensor.hpp"

namespace rotcatt {

// Graph node of the reverse-mode tape. Leaves (inputs, parameters, buffers)
// carry no backward function.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<T>&)> backward;
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording for its lifetime (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Shared handle to a node. Copies alias the same value and gradient.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value_mut() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_mut() const { return node_->grad; }
  void zero_grad() const { node_->grad = Tensor<T>(); }

  void accumulate_grad(Tensor<T>&& g) const {
    Tensor<T>& acc = node_->grad;
    if (acc.empty()) {
      acc = std::move(g);
      return;
    }
    T* a = acc.data();
    const T* b = g.data();
    const int64_t n = acc.numel();
    for (int64_t i = 0; i < n; ++i) a[i] += b[i];
  }
  void accumulate_grad(const Tensor<T>& g) const { accumulate_grad(Tensor<T>(g)); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Wraps an op output. The backward closure is recorded only when grad mode is
// on and at least one input needs a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs,
                   std::function<void(const Tensor<T>&)> backward) {
  Var<T> out(std::move(value));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  for (const auto& in : inputs) node.parents.push_back(in.node());
  node.backward = std::move(backward);
  return out;
}

// Runs reverse-mode accumulation from `root`, seeding d(root)/d(root) = 1.
// Intermediate closures and gradients are released as the sweep passes them,
// so a graph can only be differentiated once.
template <typename T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<std::shared_ptr<Node<T>>, size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      std::shared_ptr<Node<T>> parent = node->parents[next++];
      if (parent->requires_grad && !visited.count(parent.get())) {
        visited.insert(parent.get());
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }
  root.accumulate_grad(Tensor<T>(root.shape(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (!node->backward) continue;
    if (!node->grad.empty()) node->backward(node->grad);
    node->backward = nullptr;
    node->parents.clear();
    node->grad = Tensor<T>();
  }
}

}  // namespace rotcatt
