#pragma once

// Dense row-major tensors of doubles with a dynamic reverse-mode tape.
//
// A tensor created with tracked = true is a leaf of the tape. Every op whose
// inputs include a tracked tensor records a node holding its parents and a
// backward closure; backward() walks those nodes in reverse topological order
// and then releases them, so the tape lives for exactly one forward pass.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cognn/error.hpp"

namespace cognn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily during backward
  bool tracked = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

/// While alive, ops on this thread record nothing on the tape.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) { node_->shape = {0}; }

  static Tensor from(Shape shape, std::vector<double> values, bool tracked = false) {
    if (shape_numel(shape) != values.size()) {
      throw SizeError("tensor_from: shape " + shape_str(shape) + " holds " +
                      std::to_string(shape_numel(shape)) + " values, got " +
                      std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->tracked = tracked;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool tracked = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), tracked);
  }

  static Tensor filled(Shape shape, double v, bool tracked = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), tracked);
  }

  static Tensor scalar(double v, bool tracked = false) { return from({1}, {v}, tracked); }

  static Tensor identity(std::size_t n, bool tracked = false) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return from({n, n}, std::move(v), tracked);
  }

  const Shape& shape() const noexcept { return node_->shape; }
  std::size_t rank() const noexcept { return node_->shape.size(); }
  std::size_t numel() const noexcept { return node_->value.size(); }

  /// Leading extent when viewed as a matrix; rank-1 tensors are one row.
  std::size_t rows() const noexcept {
    const auto& s = node_->shape;
    if (s.size() <= 1) return 1;
    return shape_numel(Shape(s.begin(), s.end() - 1));
  }
  std::size_t cols() const noexcept {
    const auto& s = node_->shape;
    return s.empty() ? 1 : s.back();
  }

  std::span<const double> values() const noexcept { return node_->value; }

  /// In-place access for optimizers and initializers. Never call while a tape
  /// that reads this tensor is pending.
  std::span<double> mutable_values() noexcept { return node_->value; }

  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool tracked() const noexcept { return node_->tracked; }

  /// Same values, not on any tape.
  Tensor detach() const { return from(shape(), node_->value, false); }

  Tensor reshape(Shape shape) const;

  const detail::Node* id() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds the result of an op. The backward closure receives the result node
/// and must accumulate into the grad buffers of result.parents. It is dropped
/// when no input is tracked or a NoGradGuard is active.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                      std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any_tracked = false;
  for (const auto& t : inputs) any_tracked = any_tracked || t.tracked();
  if (any_tracked && no_grad_depth == 0) {
    node->tracked = true;
    node->leaf = false;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

inline Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw SizeError("reshape: " + shape_str(this->shape()) + " -> " + shape_str(shape));
  }
  return detail::make_op(std::move(shape), node_->value, {*this}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Gradients of every tracked leaf reached by a backward pass.
class Gradients {
 public:
  /// Gradient for t, or zeros when t was not reached.
  std::vector<double> of(const Tensor& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) return std::vector<double>(t.numel(), 0.0);
    return it->second;
  }

  std::span<const double> view(const Tensor& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) return {};
    return it->second;
  }

  bool reached(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend Gradients backward(const Tensor& loss);
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
};

/// Reverse sweep from a scalar loss. Consumes the tape: intermediate nodes
/// are released afterwards, so a second call on the same loss is an error.
inline Gradients backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.tracked()) throw ContractError("backward: loss is not on a tape");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_map<detail::Node*, bool> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited[loss.node().get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->tracked && !visited[p]) {
        visited[p] = true;
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) n->grad.clear();
  loss.node()->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->leaf && n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }

  Gradients out;
  for (auto* n : order) {
    if (n->leaf) {
      n->grad_buffer();
      out.grads_.emplace(n, std::move(n->grad));
      n->grad.clear();
    } else {
      n->grad.clear();
      n->parents.clear();
      n->backward_fn = nullptr;
      n->tracked = false;
    }
  }
  return out;
}

}  // namespace cognn
