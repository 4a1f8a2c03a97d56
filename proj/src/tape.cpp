#include "sleepstage/tape.hpp"

namespace sleepstage {

NodeId Tape::leaf(Tensor value, bool needs_grad) {
  return emplace(std::move(value), needs_grad, nullptr);
}

NodeId Tape::emplace(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
  if (check_finite_)
    check(value.all_finite(), ErrorKind::numeric, "non-finite value recorded on tape");
  Node n;
  n.val = std::move(value);
  n.needs = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::Node& Tape::node(NodeId id) {
  check(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(), ErrorKind::internal,
        "tape node id out of range");
  return nodes_[static_cast<std::size_t>(id)];
}

const Tape::Node& Tape::node_const(NodeId id) const {
  check(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(), ErrorKind::internal,
        "tape node id out of range");
  return nodes_[static_cast<std::size_t>(id)];
}

Tensor& Tape::grad(NodeId id) {
  Node& n = node(id);
  check(n.needs, ErrorKind::internal, "gradient requested for a node that does not need one");
  check(ran_backward_, ErrorKind::internal, "gradient requested before backward()");
  return n.grd;
}

void Tape::backward(NodeId root) {
  Node& r = node(root);
  check(r.val.numel() == 1, ErrorKind::validation, "backward root must be scalar");
  check(r.needs, ErrorKind::validation, "backward root does not depend on any parameter");
  for (NodeId i = 0; i <= root; ++i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.needs) n.grd = Tensor(n.val.shape);
  }
  ran_backward_ = true;
  r.grd.v[0] = 1.0;
  for (NodeId i = root; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.needs && n.back) n.back(*this);
  }
}

}  // namespace sleepstage
