#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "nnpass/errors.hpp"

namespace nnpass {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape");
    n *= static_cast<size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Global autograd switch. Off inside NoGradGuard scopes; evaluation paths use
// it so forward passes do not build graphs.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool prev_;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Value handle. Copies share the underlying node, mirroring how graph edges
// reference their inputs.
template <typename T>
class TensorT {
public:
  using Scalar = T;

  TensorT() = default;

  explicit TensorT(Shape shape, T fill = T(0)) {
    node_ = std::make_shared<TensorNode<T>>();
    node_->shape = std::move(shape);
    node_->value.assign(shape_numel(node_->shape), fill);
  }

  TensorT(Shape shape, std::vector<T> data) {
    node_ = std::make_shared<TensorNode<T>>();
    node_->shape = std::move(shape);
    if (data.size() != shape_numel(node_->shape))
      throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(node_->shape));
    node_->value = std::move(data);
  }

  static TensorT param(Shape shape, std::vector<T> data) {
    TensorT t(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  static TensorT scalar(T v) { return TensorT(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t numel() const { return node_->value.size(); }
  int dim(size_t i) const {
    if (i >= node_->shape.size()) throw ShapeError("dim index out of range");
    return node_->shape[i];
  }
  size_t rank() const { return node_->shape.size(); }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    return node_->value[0];
  }

  // Builds a result node. Parent edges are only recorded while grad mode is on
  // and at least one input participates in differentiation.
  static TensorT make_result(Shape shape, std::vector<T> value,
                             std::vector<TensorT> inputs,
                             std::function<void(TensorNode<T>&)> backprop) {
    TensorT out(std::move(shape), std::move(value));
    bool track = false;
    if (grad_mode()) {
      for (const auto& in : inputs)
        if (in.node_->requires_grad || !in.node_->parents.empty()) track = true;
    }
    if (track) {
      out.node_->requires_grad = true;
      for (auto& in : inputs) out.node_->parents.push_back(in.node_);
      out.node_->backprop = std::move(backprop);
    }
    return out;
  }

  void throw_if_not_finite(const std::string& where) const {
    for (T v : node_->value)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericsError("non-finite value in " + where);
  }

private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Reverse topological order by iterative DFS; the visit order is fully
// determined by graph construction order, so backward passes are reproducible.
template <typename T>
std::vector<TensorNode<T>*> topo_order(TensorNode<T>* root) {
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen;
  struct Frame {
    TensorNode<T>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (seen.insert(root).second) stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode<T>* p = f.node->parents[f.next_parent++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

// Backpropagate from a scalar loss. Gradients accumulate; callers reset
// parameter grads between steps.
template <typename T>
void backward(const TensorT<T>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss");
  auto root = loss.node();
  if (!root->requires_grad && root->parents.empty())
    throw RangeError("backward called on a tensor with no graph");
  root->ensure_grad();
  const auto order = topo_order(root.get());
  // Leaves keep accumulating across calls; interior nodes start each pass
  // clean so a repeated backward does not double-count through them.
  for (TensorNode<T>* n : order)
    if (!n->parents.empty()) std::fill(n->grad.begin(), n->grad.end(), T(0));
  root->grad[0] += T(1);
  for (TensorNode<T>* n : order) {
    if (!n->backprop) continue;
    for (auto& p : n->parents) p->ensure_grad();
    n->backprop(*n);
  }
}

}  // namespace nnpass
