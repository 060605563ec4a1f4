#include "adfseg/autograd.hpp"

#include <unordered_set>

#include "adfseg/errors.hpp"

namespace adfseg::nn {

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var leaf(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->needs_grad = true;
  n->name = std::move(name);
  return Var(std::move(n));
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (auto& p : parents) {
    if (!p.defined()) throw ContractError("make_op: undefined parent var");
    n->needs_grad = n->needs_grad || p.node()->needs_grad;
    n->parents.push_back(p.node());
  }
  if (n->needs_grad) n->backprop = std::move(backprop);
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (!root.defined()) throw ContractError("backward: undefined root");
  if (root.numel() != 1) throw ContractError("backward: root must be a scalar");

  // Iterative post-order DFS; reverse gives a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx++].get();
      if (parent->needs_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && node->has_grad()) node->backprop(*node);
  }
}

}  // namespace adfseg::nn
