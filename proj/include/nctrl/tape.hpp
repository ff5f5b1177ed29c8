#pragma once

#include <cstddef>
#include <vector>

#include "nctrl/tensor.hpp"

namespace nctrl {

using NodeId = std::size_t;

// Reverse-mode autodiff tape over float64 tensors.
//
// Ops execute eagerly: calling an op computes the value and records the
// operation so backward() can later replay adjoints in reverse order.  A
// tape is built per evaluation (per minibatch during training) and thrown
// away; parameters live outside the tape as plain tensors and are attached
// through trainable leaves.  A tape must be used from one thread at a time;
// distinct tapes are fully independent.
class Tape {
 public:
  enum class Op {
    kLeaf, kMatMul, kAdd, kAddRow, kSub, kMul, kMulScalarNode,
    kExp, kLog, kAbs, kSquare, kLeakyRelu, kLeakyReluGrad, kClamp, kScaleAdd,
    kSum, kMean, kRowSum, kLogSumExpRows, kLogSumExpAll,
    kHStack, kVStack, kSliceCols, kSliceRows, kGatherRows, kSubCol,
    kHmmLogLik,
  };

  struct Node {
    Op op = Op::kLeaf;
    std::vector<NodeId> in;
    Tensor val;
    double a = 0.0, b = 0.0;        // op constants (slope, lo/hi, scale, shift)
    std::vector<std::size_t> idx;   // slice bounds / gather indices / widths
    std::vector<Tensor> cache;      // precomputed adjoint factors (HMM op)
    bool trainable = false;
  };

  NodeId leaf(Tensor v, bool trainable = false);
  NodeId constant(Tensor v) { return leaf(std::move(v), false); }

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);             // same shape
  NodeId add_row(NodeId a, NodeId row);       // [r x c] + [1 x c]
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);             // elementwise, same shape
  NodeId mul_scalar_node(NodeId a, NodeId s); // broadcast 1x1 node
  NodeId neg(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);                       // input must be > 0
  NodeId abs(NodeId a);
  NodeId square(NodeId a);
  NodeId leaky_relu(NodeId a, double slope);
  NodeId leaky_relu_grad(NodeId a, double slope);  // piecewise-constant; own grad 0
  NodeId clamp(NodeId a, double lo, double hi);
  NodeId scale_add(NodeId a, double scale, double shift);  // scale*x + shift

  NodeId sum(NodeId a);            // -> 1x1
  NodeId mean(NodeId a);           // -> 1x1
  NodeId row_sum(NodeId a);        // [r x c] -> [r x 1]
  NodeId logsumexp_rows(NodeId a); // [r x c] -> [r x 1]
  NodeId logsumexp_all(NodeId a);  // -> 1x1

  NodeId hstack(const std::vector<NodeId>& parts);       // concat columns
  NodeId vstack(const std::vector<NodeId>& parts);       // concat rows
  NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1);
  NodeId slice_rows(NodeId a, std::size_t r0, std::size_t r1);
  NodeId gather_rows(NodeId table, std::vector<std::size_t> rows);
  NodeId sub_col(NodeId a, NodeId col);   // [r x c] - [r x 1] broadcast

  // Exact log-likelihood of a state-chain with the given log-potentials
  // (forward-backward inside; adjoints are the posterior expected counts).
  // emit: [T x C], log_trans: [C x C], log_init: [1 x C].  Entries are free
  // reals; nothing is renormalized.
  NodeId hmm_log_likelihood(NodeId emit, NodeId log_trans, NodeId log_init);

  const Tensor& val(NodeId id) const { return nodes_[id].val; }
  bool trainable(NodeId id) const { return nodes_[id].trainable; }
  std::size_t size() const { return nodes_.size(); }

  // Gradients of a scalar output with respect to every node, indexed by
  // NodeId.  Nodes the gradient never reached hold an empty tensor.
  std::vector<Tensor> backward(NodeId out) const;

 private:
  NodeId push(Node n);
  const Tensor& v(NodeId id) const { return nodes_[id].val; }
  std::vector<Node> nodes_;
};

// log N(x; mean, diag(exp(log_var))) summed over every entry -> 1x1.
NodeId gaussian_log_density(Tape& t, NodeId x, NodeId mean, NodeId log_var);

// Per-row sums: [r x c] inputs -> [r x 1] of row log-densities.
NodeId gaussian_log_density_rows(Tape& t, NodeId x, NodeId mean, NodeId log_var);

}  // namespace nctrl
