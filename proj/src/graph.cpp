#include "dspl/graph.hpp"

#include <stdexcept>

namespace dspl {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::DeformConv2d: return "deform_conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::MaxPool2d: return "max_pool2d";
    case OpKind::AdaptiveMaxPool: return "adaptive_max_pool";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::Linear: return "linear";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Sum: return "sum";
    case OpKind::Scale: return "scale";
    case OpKind::Concat: return "concat";
    case OpKind::Upsample: return "upsample";
    case OpKind::CenterCrop: return "center_crop";
    case OpKind::Flatten: return "flatten";
    case OpKind::BinaryCrossEntropy: return "binary_cross_entropy";
    case OpKind::SoftDice: return "soft_dice";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::parameter(Tensor& t) {
  if (auto it = bound_.find(&t); it != bound_.end()) return Var{this, it->second};
  const NodeId id = nodes_.size();
  nodes_.push_back(Node{OpKind::Leaf, {}, t, {}, true, &t, nullptr});
  nodes_.back().value.clear_grad();
  nodes_.back().value.set_node_id(id);
  bound_.emplace(&t, id);
  t.set_node_id(id);
  return Var{this, id};
}

Var Graph::input(Tensor t, bool requires_grad) {
  const NodeId id = nodes_.size();
  t.clear_grad();
  t.set_node_id(id);
  nodes_.push_back(Node{requires_grad ? OpKind::Leaf : OpKind::Constant, {}, std::move(t), {},
                        requires_grad, nullptr, nullptr});
  return Var{this, id};
}

Var Graph::record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
  value.check_finite(op_name(kind));
  bool needs = false;
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw std::logic_error("graph: input id precedes no node");
    needs = needs || nodes_[in].requires_grad;
  }
  const NodeId id = nodes_.size();
  value.set_node_id(id);
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), {}, needs, nullptr,
                        needs ? std::move(backward) : BackwardFn{}});
  return Var{this, id};
}

std::span<double> Graph::grad(NodeId id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw std::logic_error("backward: loss belongs to another graph");
  if (backward_done_) {
    throw std::logic_error("backward: already run on this graph; call reset() first");
  }
  if (value(loss.id).numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(value(loss.id).shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] = 1.0;
  for (NodeId i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.bound == nullptr || n.grad.empty()) continue;
    n.bound->ensure_grad();
    auto dst = n.bound->grad();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
  }
}

void Graph::reset() {
  nodes_.clear();
  bound_.clear();
  backward_done_ = false;
}

}  // namespace dspl
