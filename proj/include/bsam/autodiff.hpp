#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bsam/models.hpp"
#include "bsam/tensor.hpp"

namespace bsam {

// Caller-owned pass counters. Every loss evaluation adds one forward pass,
// every gradient evaluation one forward and one backward pass.
struct PassCounts {
  std::int64_t forward = 0;
  std::int64_t backward = 0;
};

// Reverse-mode tape for the handful of ops an MLP needs. Nodes are appended in
// evaluation order, so walking them backwards is a valid topological order.
class Tape {
 public:
  using NodeId = std::size_t;

  NodeId leaf(Tensor value, bool requires_grad = false);
  NodeId matmul(NodeId a, NodeId b);
  // (m, n) + (n) broadcast over rows.
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId relu(NodeId x);
  // x * mask elementwise: a ReLU whose on/off pattern is fixed in advance.
  NodeId masked(NodeId x, std::vector<unsigned char> mask);
  // Mean softmax cross-entropy over rows of `logits`; returns a scalar node.
  NodeId softmax_cross_entropy(NodeId logits, std::span<const int> labels);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and propagates to every node that requires grad.
  void backward(NodeId root);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backprop;
  };

  NodeId push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop);
  Tensor& grad_ref(NodeId id) { return nodes_[id].grad; }
  bool needs(NodeId id) const { return nodes_[id].requires_grad; }

  std::vector<Node> nodes_;
};

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

// Mean cross-entropy for MLPs; for analytic landscapes the landscape value plus
// the linear noise term xi^T w, xi = column mean of the batch features.
double forward_loss(const ParamVector& params, const Batch& batch, const ModelSpec& spec,
                    PassCounts* counts = nullptr);

LossAndGrad grad(const ParamVector& params, const Batch& batch, const ModelSpec& spec, PassCounts* counts = nullptr);

// ReLU on/off pattern of every hidden layer, each (rows, width) row-major.
using ReluMasks = std::vector<std::vector<unsigned char>>;

ReluMasks relu_masks(const ParamVector& params, const Batch& batch, const ModelSpec& spec);
// Gradient of the MLP with every ReLU replaced by its frozen mask, i.e. the
// network that is piecewise identical to the real one around the point the
// masks came from. Counts as one forward and one backward pass.
LossAndGrad grad_with_masks(const ParamVector& params, const Batch& batch, const ModelSpec& spec,
                            const ReluMasks& masks, PassCounts* counts = nullptr);

// Central differences, one coordinate at a time. Throws RangeError unless h > 0.
ParamVector finite_difference_gradient(const ParamVector& params, const Batch& batch, const ModelSpec& spec,
                                       double h);

// Noise-free batch for an analytic landscape: a single all-zero row.
Batch clean_batch(const ModelSpec& spec);

// Class scores for each row of `features` (MLP only); shape (n, classes).
Tensor mlp_logits(const ParamVector& params, const Tensor& features, const ModelSpec& spec);

}  // namespace bsam
