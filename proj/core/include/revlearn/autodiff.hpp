#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "revlearn/errors.hpp"

namespace revlearn::ad {

using Vec = std::vector<double>;

enum class Op : uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Smul,
  Exp,
  Log,
  Tanh,
  Relu,
  Step0,
  Matmul,
  Sum,
  RowSum,
  ColSum,
  RepCols,
  RepRows,
  Slice,
  Pad,
  Reshape,
  LogSoftmax,
  Softmax,
  Pick,
  ScatterCols,
  Bfill,
};

const char* op_name(Op op);

class Tape;

// Cheap handle into a tape. Ops append nodes and evaluate eagerly.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

struct Node {
  Op op = Op::Leaf;
  int32_t a = -1;
  int32_t b = -1;
  int32_t rows = 0;
  int32_t cols = 0;
  bool req_grad = false;
  bool trans_a = false;
  bool trans_b = false;
  int64_t i0 = 0;  // slice/pad offset
  int64_t i1 = 0;  // pad target length
  double scalar = 0.0;
  Vec val;
  Vec tan;  // forward-mode tangent; empty means structurally zero
  std::vector<int32_t> labels;
};

// Record of primitive operations in topological order. A backward sweep
// appends adjoint nodes to the same tape, so gradients are differentiable
// again (nesting) and carry tangents when the inputs did.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  int32_t size() const { return static_cast<int32_t>(nodes_.size()); }
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
  Node& node(int32_t id) { return nodes_[static_cast<size_t>(id)]; }

  Var input(std::span<const double> data, int64_t rows, int64_t cols);
  Var constant(std::span<const double> data, int64_t rows, int64_t cols);
  Var scalar_const(double v) { return constant(std::span<const double>(&v, 1), 1, 1); }
  Var const_fill(double v, int64_t rows, int64_t cols);

  // Seed a forward-mode direction on a leaf. Must happen before dependent
  // nodes are recorded; tangents propagate at node creation time.
  void seed_tangent(Var v, std::span<const double> tan);

 private:
  std::vector<Node> nodes_;
  friend Var append_node(Tape&, Node&&);
};

const Vec& value(Var v);
std::span<const double> tangent(Var v);
int64_t rows(Var v);
int64_t cols(Var v);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var smul(Var a, double c);
Var neg(Var a);
Var exp_(Var a);
Var log_(Var a);
Var tanh_(Var a);
Var relu(Var a);
Var step0(Var a);  // 1 where input > 0; constant w.r.t. differentiation
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var sum(Var a);
Var rowsum(Var a);
Var colsum(Var a);
Var rep_cols(Var a, int64_t k);
Var rep_rows(Var a, int64_t r);
Var slice(Var a, int64_t offset, int64_t len);  // flat view, result len x 1
Var pad(Var a, int64_t offset, int64_t n);      // inverse of slice
Var reshape(Var a, int64_t rows, int64_t cols);
Var log_softmax(Var a);  // row-wise, max-shifted
Var softmax(Var a);
Var pick(Var a, std::span<const int32_t> labels);
Var scatter_cols(Var a, std::span<const int32_t> labels, int64_t num_cols);
Var bfill(Var scalar_var, int64_t rows, int64_t cols);
Var dot(Var a, Var b);

// Mean softmax cross-entropy of logits (B x K) against integer labels,
// composed from the max-shifted log_softmax.
Var softmax_xent(Var logits, std::span<const int32_t> labels);

// Reverse sweep from the scalar `out`. Returns one adjoint per entry of
// `wrt` (a zero constant when `out` does not depend on it). Adjoints are
// ordinary tape nodes: differentiable and tangent-carrying.
std::vector<Var> gradients(Var out, std::span<const Var> wrt);

// Convenience wrapper for plain vector->scalar functions.
Vec grad(const std::function<Var(Tape&, Var)>& f, std::span<const double> at);

}  // namespace revlearn::ad
