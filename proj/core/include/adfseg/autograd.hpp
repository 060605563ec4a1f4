#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "adfseg/tensor.hpp"

namespace adfseg::nn {

/// One vertex of the define-by-run tape. Interior nodes carry a backprop
/// closure that scatters this node's grad into its parents' grads.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad{false};
  bool needs_grad{false};  // requires_grad or any ancestor does
  std::string name;        // set for parameters
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.numel() == value.numel() && value.numel() > 0; }
};

/// Value-semantics handle to a tape node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& value() { return n_->value; }
  Tensor& grad() { return n_->ensure_grad(); }
  const std::shared_ptr<Node>& node() const { return n_; }

  const Shape& shape() const { return n_->value.shape(); }
  int64_t dim(int64_t i) const { return n_->value.dim(i); }
  int64_t numel() const { return n_->value.numel(); }
  bool needs_grad() const { return n_->needs_grad; }

  void zero_grad() {
    if (n_->has_grad()) n_->grad.fill(0);
  }

 private:
  std::shared_ptr<Node> n_;
};

/// Leaf with no gradient tracking (inputs, masks, frozen stats).
Var constant(Tensor value);

/// Trainable leaf; gradients accumulate in node->grad across backward calls
/// until zero_grad.
Var leaf(Tensor value, std::string name);

/// Reverse-mode sweep from a scalar root. Iterative topological order, so
/// graph depth is not bounded by the C++ stack.
void backward(const Var& root);

/// Builds an interior node. The backprop closure sees the finished node and
/// must guard each parent with needs_grad before accumulating.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop);

}  // namespace adfseg::nn
