#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "prime/tensor.hpp"

namespace prime {

using NodeId = std::size_t;

enum class Op {
  kLeaf,
  kMatMul,      // (n x k) . (k x m)
  kAdd,         // elementwise, identical shapes
  kAddBias,     // (n x m) + row vector (m)
  kTanh,
  kLogSoftmax,  // row-wise
  kGatherRows,  // embedding lookup, several ids concatenated per output row
  kGatherCols,  // one column per row, output (n x 1)
  kSum,         // all entries, scalar output
  kScale,       // multiply by a constant
};

struct TapeNode {
  Op op = Op::kLeaf;
  std::vector<NodeId> inputs;
  Tensor value;
  std::vector<std::size_t> index;  // ids for the gather primitives
  double factor = 0.0;             // kScale constant
};

// Append-only record of primitive applications. Values are computed eagerly,
// so a node id is always greater than the ids of its inputs.
class Tape {
 public:
  NodeId leaf(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId tanh(NodeId x);
  NodeId log_softmax(NodeId x);
  // Output row r concatenates table rows ids[r*per_row .. r*per_row+per_row).
  NodeId gather_rows(NodeId table, std::vector<std::size_t> ids, std::size_t per_row);
  // Output row r holds x(r, cols[r]).
  NodeId gather_cols(NodeId x, std::vector<std::size_t> cols);
  NodeId sum(NodeId x);
  NodeId scale(NodeId x, double c);

  const Tensor& value(NodeId id) const { return node(id).value; }
  const TapeNode& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  NodeId push(TapeNode n);
  std::vector<TapeNode> nodes_;
};

// Gradient of one scalar loss with respect to every node on the tape.
class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  const Tensor& operator[](NodeId id) const { return grads_.at(id); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<Tensor> grads_;
};

// Reverse sweep from `loss` (must hold exactly one value). Nodes that do not
// feed the loss get zero gradients of their own shape.
Gradients backward(const Tape& tape, NodeId loss);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<double(const Tensor&)>& f,
                  const Tensor& analytic, const Tensor& params, double eps);

// Same, with `build` recording the loss on a fresh tape from a parameter leaf.
double grad_check(const std::function<NodeId(Tape&, NodeId)>& build,
                  const Tensor& params, double eps);

}  // namespace prime
