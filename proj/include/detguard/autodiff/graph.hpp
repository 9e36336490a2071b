#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "detguard/autodiff/param_store.hpp"
#include "detguard/autodiff/tensor.hpp"

namespace detguard::ad {

class Graph;

// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Corner box (x1, y1, x2, y2) in input-image pixels.
using RoiBox = std::array<double, 4>;

// Define-by-run computation record. Every op evaluates eagerly and appends a
// node holding its output and the context needed for the backward pass, so
// the node list is topologically ordered by construction.
//
// Image tensors are laid out [C, H, W]; matrices [rows, cols].
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor value);
  // Leaf bound to a store entry; backward accumulates into its grad slot.
  Var param(ParameterStore& store, const std::string& name);
  // Same value, no gradient flows back through it.
  Var detach(Var x);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  Var add_scalar(Var x, double c);
  Var sum(Var x);
  Var reshape(Var x, Shape shape);

  Var relu(Var x);
  Var sigmoid(Var x);
  // Row-wise softmax over the last dimension of a rank-1 or rank-2 tensor.
  Var softmax(Var x);

  // x [C,H,W], w [O,C,k,k], b [O] -> [O, H', W'].
  Var conv2d(Var x, Var w, Var b, int stride, int pad);
  // x [N,F], w [O,F], b [O] -> [N,O].
  Var linear(Var x, Var w, Var b);
  // Bilinear RoI pooling with 2x2 samples per bin. feat [C,H,W] ->
  // [R, C*out*out]. Boxes are constants.
  Var roi_align(Var feat, const std::vector<RoiBox>& boxes, int out, double spatial_scale);
  // Flat-index gather -> [n].
  Var gather(Var x, const std::vector<int>& indices);

  // Mean softmax cross-entropy of logits [N,K] against labels.
  Var cross_entropy(Var logits, const std::vector<int>& labels);
  // Mean binary cross-entropy of logits [n] against targets in [0,1].
  Var bce_with_logits(Var logits, const std::vector<double>& targets);
  // Sum of smooth-L1 (Huber with transition beta) between x [n] and target.
  Var smooth_l1(Var x, const std::vector<double>& target, double beta);

  // Reverse pass from a scalar node. Parameter leaves reached by the graph
  // accumulate into their store gradients; leaves not reachable receive a
  // zero gradient slot.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }
  const std::string& op_name(Var v) const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    Buffer grad;
    std::vector<int> inputs;
    bool requires_grad = false;
    Tensor* param = nullptr;
    // Propagates this node's grad into its inputs' grads.
    std::function<void(Graph&, Node&)> back;
  };

  Var push(std::string op, Tensor value, std::vector<int> inputs,
           std::function<void(Graph&, Node&)> back);
  Node& node(Var v);
  const Node& node(Var v) const;
  Buffer& grad_of(int id);
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  void check(Var v, const char* op) const;

  std::vector<Node> nodes_;
};

}  // namespace detguard::ad
