#pragma once

#include <vector>

#include "loraguard/tensor.hpp"

namespace loraguard {

// Double-precision work matrix used for tape node values and adjoints.
// Parameters and returned gradients stay float32; keeping the intermediate
// math in double makes central-difference gradient checks meaningful.
struct DMat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  DMat() = default;
  DMat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

// Reverse-mode tape over 2-D tensors. Each builder call records one primitive
// node (matmul, add, scale, tanh, mean-pool, softmax cross-entropy, sum) and
// eagerly computes its value. backward() replays the record once in reverse
// topological order -- which is simply reverse recording order, since inputs
// always precede their consumers -- and returns a gradient per param node.
// A tape is built per batch and consumed by backward().
class Tape {
 public:
  using NodeId = int;

  // Leaf with no gradient.
  NodeId constant(const Tensor2D& value);
  // Trainable leaf; backward() reports its gradient.
  NodeId param(const Tensor2D& value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId tanh(NodeId a);
  // Means over consecutive groups of `cols_per_group` columns:
  // (r x m*g) -> (r x m).
  NodeId mean_pool(NodeId a, int cols_per_group);
  // logits: (classes x n), labels: n entries in [0, classes).
  // Scalar mean cross-entropy over the batch.
  NodeId softmax_cross_entropy(NodeId logits, const std::vector<int>& labels);
  NodeId sum(NodeId a);

  const DMat& value(NodeId id) const;
  double scalar(NodeId id) const;
  Tensor2D value_f32(NodeId id) const;
  int node_count() const { return static_cast<int>(nodes_.size()); }
  int param_count() const { return static_cast<int>(params_.size()); }

  // Gradients of the scalar `loss` node with respect to every param node, in
  // recording order. The tape is consumed; any further use throws.
  std::vector<Tensor2D> backward(NodeId loss);

 private:
  enum class Op { constant, param, matmul, add, scale, tanh, mean_pool, softmax_xent, sum };

  struct Node {
    Op op;
    NodeId a = -1;
    NodeId b = -1;
    double factor = 1.0;
    int group = 0;
    std::vector<int> labels;
    DMat value;
    DMat probs;  // cached softmax, filled by softmax_xent
  };

  NodeId push(Node n);
  const Node& node(NodeId id) const;
  void require_live(const char* op) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
  bool consumed_ = false;
};

}  // namespace loraguard
