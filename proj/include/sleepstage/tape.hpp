#pragma once

// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
// creation order is already a topological order; backward() walks it once in
// reverse, and each node's closure adds into its parents' gradient buffers.

#include <cstdint>
#include <functional>
#include <vector>

#include "sleepstage/tensor.hpp"

namespace sleepstage {

using NodeId = std::int32_t;

class Tape {
 public:
  struct Node {
    Tensor val;
    Tensor grd;  // allocated by backward() for nodes that need gradients
    bool needs = false;
    std::function<void(Tape&)> back;  // empty for leaves
  };

  NodeId leaf(Tensor value, bool needs_grad = false);
  NodeId emplace(Tensor value, bool needs_grad, std::function<void(Tape&)> back);

  const Tensor& value(NodeId id) const { return node_const(id).val; }
  Tensor& grad(NodeId id);
  bool needs_grad(NodeId id) const { return node_const(id).needs; }
  std::size_t size() const { return nodes_.size(); }

  // Root must be a scalar (numel == 1). Seeds d(root)/d(root) = 1 and runs all
  // recorded closures in reverse creation order.
  void backward(NodeId root);

  // When enabled, every appended value is checked for NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }

  Node& node(NodeId id);
  const Node& node_const(NodeId id) const;

 private:
  std::vector<Node> nodes_;
  bool check_finite_ = false;
  bool ran_backward_ = false;
};

}  // namespace sleepstage
