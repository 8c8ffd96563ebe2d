#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qlab/tensor.hpp"

namespace qlab {

// Gradients keyed by the name of the input node they belong to. Shapes always
// match the corresponding input tensor.
struct GradientMap {
  std::map<std::string, Tensor> grads;

  // Elementwise addition; shapes and key sets must agree.
  void accumulate(const GradientMap& other);
  void scale_all(float c);
  const Tensor& at(const std::string& name) const;
};

// Reverse-mode tape over float32 tensors.
//
// Nodes are appended in construction order, which is by construction a valid
// topological order: an operation can only reference nodes that already
// exist. Forward values are computed eagerly as each node is added;
// backward() replays the tape in reverse. Every kernel validates shapes up
// front (ContractViolation) and checks its output for NaN/Inf (NumericFault
// naming the kernel); backward() runs the same finiteness check on every
// gradient it produces.
class Graph {
 public:
  using NodeId = int;

  // Leaf holding a value. Named leaves with requires_grad are the entries of
  // the GradientMap returned by backward().
  NodeId input(Tensor value, std::string name = "", bool requires_grad = false);

  NodeId matmul(NodeId a, NodeId b);   // [m,k] x [k,n] -> [m,n]
  NodeId add(NodeId a, NodeId b);      // same shape, or [r,c] + [c] broadcast over rows
  NodeId scale(NodeId a, float factor);
  NodeId embedding_gather(NodeId table, std::vector<int> ids);  // [V,d] -> [n,d]
  NodeId layernorm(NodeId x, NodeId gamma, NodeId beta);        // per row, epsilon 1e-5
  NodeId gelu(NodeId x);                                        // tanh approximation
  // Fused causal multi-head attention over a [T, d] sequence. q/k/v are the
  // projected sequences; scores use 1/sqrt(d/n_heads); position i attends to
  // j <= i only.
  NodeId causal_attention(NodeId q, NodeId k, NodeId v, int n_heads);
  // Mean NLL over rows whose target is >= 0 (negative targets are ignored).
  // Produces a scalar.
  NodeId cross_entropy(NodeId logits, std::vector<int> targets);
  // Straight-through estimator: `fwd` maps the input value in the forward
  // pass; the backward pass applies the identity Jacobian. `tag` names the
  // node in numeric-fault diagnostics.
  NodeId straight_through(NodeId x, std::function<Tensor(const Tensor&)> fwd, std::string tag);

  const Tensor& value(NodeId id) const;
  int size() const { return static_cast<int>(nodes_.size()); }

  // Gradient of a scalar loss node with respect to every requires_grad input.
  // Inputs with no path to the loss get zero gradients.
  GradientMap backward(NodeId loss);

 private:
  enum class Op {
    kInput,
    kMatmul,
    kAdd,
    kScale,
    kGather,
    kLayernorm,
    kGelu,
    kAttention,
    kCrossEntropy,
    kStraightThrough,
  };
  struct Node {
    Op op;
    std::array<NodeId, 3> in{-1, -1, -1};
    Tensor value;
    std::vector<int> ids;      // kGather row ids / kCrossEntropy targets
    std::vector<float> saved;  // attention probabilities, layernorm stats, CE probabilities
    float factor = 0.0f;       // kScale
    int n_heads = 0;
    std::function<Tensor(const Tensor&)> ste_fwd;
    std::string name;  // input name or straight-through tag
    bool requires_grad = false;
    bool needs_grad = false;  // some requires_grad leaf feeds this node
  };

  NodeId push(Node n, const std::string& kernel);
  const Node& at(NodeId id) const;
  std::string describe(NodeId id) const;

  std::vector<Node> nodes_;
};

// Softmax of one row in place, with max subtraction for stability. Shared by
// the attention and cross-entropy kernels; exposed for tests.
void softmax_row(std::span<float> row);

}  // namespace qlab
