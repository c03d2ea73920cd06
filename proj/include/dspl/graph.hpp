#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dspl/tensor.hpp"

namespace dspl {

using NodeId = std::size_t;

enum class OpKind {
  Leaf,
  Constant,
  Conv2d,
  DeformConv2d,
  Relu,
  Sigmoid,
  MaxPool2d,
  AdaptiveMaxPool,
  BatchNorm,
  Linear,
  SoftmaxCrossEntropy,
  Add,
  Mul,
  Sum,
  Scale,
  Concat,
  Upsample,
  CenterCrop,
  Flatten,
  BinaryCrossEntropy,
  SoftDice,
};

std::string_view op_name(OpKind kind);

class Graph;

/// Handle to a node on a Graph. Cheap to copy; valid while the graph lives.
/// References returned by value()/shape() are invalidated by the next
/// recorded op.
struct Var {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Append-only tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the vector order is already a
/// topological order and backward walks it once in reverse. Parameters are
/// bound by address: `parameter(t)` registers `t` once per graph and
/// `backward` accumulates the node gradient into `t.grad()`.
class Graph {
 public:
  /// Reads the gradient of `self` and accumulates into its inputs.
  using BackwardFn = std::function<void(Graph&, NodeId self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var parameter(Tensor& t);
  Var input(Tensor t, bool requires_grad = false);

  /// Appends an op result. `value` is checked for finiteness.
  Var record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator for a node, allocated (zeroed) on first access.
  std::span<double> grad(NodeId id);
  bool has_grad(NodeId id) const { return !nodes_.at(id).grad.empty(); }

  /// Populates gradients for every node reachable from a scalar `loss`.
  /// Throws if called a second time before `reset`.
  void backward(Var loss);

  void reset();

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* bound = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, NodeId> bound_;
  bool backward_done_ = false;
};

}  // namespace dspl
