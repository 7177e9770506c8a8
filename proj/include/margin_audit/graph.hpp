#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "margin_audit/tensor.hpp"

namespace margin_audit {

using NodeId = std::size_t;

enum class Op {
  Leaf,
  Affine,
  Conv2d,
  Add,
  Sub,
  Mul,
  Scale,
  Relu,
  Tanh,
  Sigmoid,
  Exp,
  LogSoftmax,
  SoftmaxCrossEntropy,
  Mse,
  Sum,
  Mean,
  MeanRowSum,
};

std::string_view op_name(Op op);

// Valid (unpadded) convolution over images stored flat as channel-major rows.
struct Conv2dGeometry {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 3;
  std::size_t out_channels = 1;
  std::size_t stride = 1;

  std::size_t out_height() const { return (height - kernel) / stride + 1; }
  std::size_t out_width() const { return (width - kernel) / stride + 1; }
  std::size_t input_size() const { return channels * height * width; }
  std::size_t output_size() const { return out_channels * out_height() * out_width(); }
};

using Bindings = std::map<std::string, Tensor, std::less<>>;
using Gradients = std::map<std::string, Tensor, std::less<>>;

// Reverse-mode tape. Nodes are appended in creation order, so every node's
// inputs precede it and creation order is a topological order.
//
// Leaves are named placeholders bound to tensors before evaluation. Bindings
// persist across forward calls, so parameters can be bound once and inputs
// rebound per call. Batched tensors are [rows, features]; the only
// broadcasting is the bias of affine/conv2d.
class Graph {
 public:
  NodeId leaf(std::string name);

  // x: [n] or [B, n]; w: [m, n]; b: [m]. Output x·wᵀ + b.
  NodeId affine(NodeId x, NodeId w, NodeId b);
  // x: [input_size] or [B, input_size]; kernel: [out_channels, channels·k·k]; bias: [out_channels].
  NodeId conv2d(NodeId x, NodeId kernel, NodeId bias, const Conv2dGeometry& geometry);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId exp(NodeId a);
  // Row-wise over the last dimension.
  NodeId log_softmax(NodeId a);
  // Scalar: mean over rows of -Σ target·log_softmax(logits). Max-shifted log-sum-exp.
  NodeId softmax_cross_entropy(NodeId logits, NodeId target);
  // Scalar: mean over all elements of (pred - target)².
  NodeId mse(NodeId pred, NodeId target);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  // Scalar: sum of all elements divided by the row count.
  NodeId mean_row_sum(NodeId a);

  void bind(std::string_view name, Tensor value);
  void bind_all(const Bindings& bindings);
  bool is_bound(std::string_view name) const;

  // Evaluates the ancestors of `output` and caches their values.
  const Tensor& forward(NodeId output);
  const Tensor& forward(NodeId output, const Bindings& bindings);

  // ∂(seed·output)/∂leaf for every leaf. Leaves that do not influence the
  // output get zero gradients. Requires a prior forward of `output`.
  Gradients backward(NodeId output, const Tensor& seed) const;
  Gradients backward(NodeId output) const;  // seed = 1 for scalar outputs
  // Restricted to the named leaves; other leaves are omitted from the result
  // and their gradients are never formed.
  Gradients backward(NodeId output, const Tensor& seed, const std::vector<std::string>& wrt) const;

  const Tensor& value(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  Op op(NodeId id) const { return nodes_.at(id).op; }
  std::string describe(NodeId id) const;

 private:
  struct Node {
    Op op = Op::Leaf;
    std::array<NodeId, 3> inputs{};
    std::size_t arity = 0;
    double factor = 0.0;
    Conv2dGeometry geometry{};
    std::string name;
    Tensor value;
    bool bound = false;
    std::size_t evaluation = 0;
  };

  NodeId push(Node node);
  NodeId unary(Op op, NodeId a);
  NodeId binary(Op op, NodeId a, NodeId b);
  std::vector<bool> ancestors(NodeId output) const;
  void evaluate(NodeId id);
  void check_id(NodeId id) const;
  [[noreturn]] void fail(NodeId id, const std::string& what) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId, std::less<>> leaves_;
  std::size_t evaluation_ = 0;
};

}  // namespace margin_audit
