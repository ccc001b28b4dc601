#include "revlearn/autodiff.hpp"

#include <array>
#include <cmath>
#include <cstring>

namespace revlearn::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Smul: return "smul";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Step0: return "step0";
    case Op::Matmul: return "matmul";
    case Op::Sum: return "sum";
    case Op::RowSum: return "rowsum";
    case Op::ColSum: return "colsum";
    case Op::RepCols: return "rep_cols";
    case Op::RepRows: return "rep_rows";
    case Op::Slice: return "slice";
    case Op::Pad: return "pad";
    case Op::Reshape: return "reshape";
    case Op::LogSoftmax: return "log_softmax";
    case Op::Softmax: return "softmax";
    case Op::Pick: return "pick";
    case Op::ScatterCols: return "scatter_cols";
    case Op::Bfill: return "bfill";
  }
  return "?";
}

namespace {

void check_finite(const Vec& xs, Op op, size_t id) {
  for (double v : xs) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in ") + op_name(op) + " (node " +
                         std::to_string(id) + ")");
    }
  }
}

int64_t numel(const Node& n) { return static_cast<int64_t>(n.rows) * n.cols; }

// C (m x n) (+)= op(A) * op(B)
void matmul_kernel(const double* A, int64_t ar, int64_t ac, bool ta, const double* B, int64_t br,
                   int64_t bc, bool tb, double* C, bool accumulate) {
  const int64_t m = ta ? ac : ar;
  const int64_t k = ta ? ar : ac;
  const int64_t n = tb ? br : bc;
  if (!accumulate) std::memset(C, 0, static_cast<size_t>(m * n) * sizeof(double));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = ta ? A[kk * ac + i] : A[i * ac + kk];
      if (av == 0.0) continue;
      double* crow = C + i * n;
      if (!tb) {
        const double* brow = B + kk * bc;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int64_t j = 0; j < n; ++j) crow[j] += av * B[j * bc + kk];
      }
    }
  }
}

}  // namespace

Var append_node(Tape& tp, Node&& n) {
  check_finite(n.val, n.op, tp.nodes_.size());
  if (!n.tan.empty()) check_finite(n.tan, n.op, tp.nodes_.size());
  if (n.op != Op::Leaf && n.op != Op::Step0) {
    bool rq = false;
    if (n.a >= 0) rq = rq || tp.nodes_[static_cast<size_t>(n.a)].req_grad;
    if (n.b >= 0) rq = rq || tp.nodes_[static_cast<size_t>(n.b)].req_grad;
    n.req_grad = n.req_grad || rq;
  }
  tp.nodes_.push_back(std::move(n));
  return Var{&tp, static_cast<int32_t>(tp.nodes_.size()) - 1};
}

namespace {

Node fresh(Op op, int64_t r, int64_t c) {
  Node n;
  n.op = op;
  n.rows = static_cast<int32_t>(r);
  n.cols = static_cast<int32_t>(c);
  n.val.resize(static_cast<size_t>(r * c));
  return n;
}

const Node& nd(Var v) { return v.tape->node(v.id); }

const Vec* tan_ptr(Var v) {
  if (!v.valid()) return nullptr;
  const Vec& t = nd(v).tan;
  return t.empty() ? nullptr : &t;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

void require_same_shape(Var a, Var b, const char* what) {
  require(nd(a).rows == nd(b).rows && nd(a).cols == nd(b).cols,
          std::string(what) + ": shape mismatch");
}

void require_same_tape(Var a, Var b) {
  require(a.tape == b.tape, "operands recorded on different tapes");
}

}  // namespace

Var Tape::input(std::span<const double> data, int64_t rows, int64_t cols) {
  require(static_cast<int64_t>(data.size()) == rows * cols, "input: size mismatch");
  Node n = fresh(Op::Leaf, rows, cols);
  n.val.assign(data.begin(), data.end());
  n.req_grad = true;
  return append_node(*this, std::move(n));
}

Var Tape::constant(std::span<const double> data, int64_t rows, int64_t cols) {
  require(static_cast<int64_t>(data.size()) == rows * cols, "constant: size mismatch");
  Node n = fresh(Op::Leaf, rows, cols);
  n.val.assign(data.begin(), data.end());
  n.req_grad = false;
  return append_node(*this, std::move(n));
}

Var Tape::const_fill(double v, int64_t rows, int64_t cols) {
  Node n = fresh(Op::Leaf, rows, cols);
  std::fill(n.val.begin(), n.val.end(), v);
  n.req_grad = false;
  return append_node(*this, std::move(n));
}

void Tape::seed_tangent(Var v, std::span<const double> tan) {
  Node& n = node(v.id);
  require(static_cast<int64_t>(tan.size()) == numel(n), "seed_tangent: size mismatch");
  n.tan.assign(tan.begin(), tan.end());
}

const Vec& value(Var v) { return nd(v).val; }

std::span<const double> tangent(Var v) {
  const Vec& t = nd(v).tan;
  return {t.data(), t.size()};
}

int64_t rows(Var v) { return nd(v).rows; }
int64_t cols(Var v) { return nd(v).cols; }

namespace {

template <typename F, typename DF>
Var elementwise_binary(Op op, Var a, Var b, F f, DF df) {
  require_same_tape(a, b);
  require_same_shape(a, b, op_name(op));
  const Vec& av = nd(a).val;
  const Vec& bv = nd(b).val;
  Node n = fresh(op, nd(a).rows, nd(a).cols);
  for (size_t i = 0; i < av.size(); ++i) n.val[i] = f(av[i], bv[i]);
  const Vec* ta = tan_ptr(a);
  const Vec* tb = tan_ptr(b);
  if (ta || tb) {
    n.tan.resize(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
      n.tan[i] = df(av[i], bv[i], ta ? (*ta)[i] : 0.0, tb ? (*tb)[i] : 0.0);
    }
  }
  n.a = a.id;
  n.b = b.id;
  return append_node(*a.tape, std::move(n));
}

template <typename F, typename DF>
Var elementwise_unary(Op op, Var a, F f, DF df) {
  const Vec& av = nd(a).val;
  Node n = fresh(op, nd(a).rows, nd(a).cols);
  for (size_t i = 0; i < av.size(); ++i) n.val[i] = f(av[i]);
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.resize(av.size());
    for (size_t i = 0; i < av.size(); ++i) n.tan[i] = df(av[i], n.val[i], (*ta)[i]);
  }
  n.a = a.id;
  return append_node(*a.tape, std::move(n));
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise_binary(
      Op::Add, a, b, [](double x, double y) { return x + y; },
      [](double, double, double tx, double ty) { return tx + ty; });
}

Var sub(Var a, Var b) {
  return elementwise_binary(
      Op::Sub, a, b, [](double x, double y) { return x - y; },
      [](double, double, double tx, double ty) { return tx - ty; });
}

Var mul(Var a, Var b) {
  return elementwise_binary(
      Op::Mul, a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double tx, double ty) { return tx * y + x * ty; });
}

Var div(Var a, Var b) {
  return elementwise_binary(
      Op::Div, a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double tx, double ty) { return (tx - x / y * ty) / y; });
}

Var smul(Var a, double c) {
  const Vec& av = nd(a).val;
  Node n = fresh(Op::Smul, nd(a).rows, nd(a).cols);
  for (size_t i = 0; i < av.size(); ++i) n.val[i] = c * av[i];
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.resize(av.size());
    for (size_t i = 0; i < av.size(); ++i) n.tan[i] = c * (*ta)[i];
  }
  n.a = a.id;
  n.scalar = c;
  return append_node(*a.tape, std::move(n));
}

Var neg(Var a) { return smul(a, -1.0); }

Var exp_(Var a) {
  return elementwise_unary(
      Op::Exp, a, [](double x) { return std::exp(x); },
      [](double, double y, double t) { return y * t; });
}

Var log_(Var a) {
  return elementwise_unary(
      Op::Log, a, [](double x) { return std::log(x); },
      [](double x, double, double t) { return t / x; });
}

Var tanh_(Var a) {
  return elementwise_unary(
      Op::Tanh, a, [](double x) { return std::tanh(x); },
      [](double, double y, double t) { return (1.0 - y * y) * t; });
}

Var relu(Var a) {
  return elementwise_unary(
      Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double, double t) { return x > 0.0 ? t : 0.0; });
}

Var step0(Var a) {
  const Vec& av = nd(a).val;
  Node n = fresh(Op::Step0, nd(a).rows, nd(a).cols);
  for (size_t i = 0; i < av.size(); ++i) n.val[i] = av[i] > 0.0 ? 1.0 : 0.0;
  n.a = a.id;
  return append_node(*a.tape, std::move(n));  // req_grad stays false: constant mask
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  require_same_tape(a, b);
  const Node& na = nd(a);
  const Node& nb = nd(b);
  const int64_t m = trans_a ? na.cols : na.rows;
  const int64_t ka = trans_a ? na.rows : na.cols;
  const int64_t kb = trans_b ? nb.cols : nb.rows;
  const int64_t n2 = trans_b ? nb.rows : nb.cols;
  require(ka == kb, "matmul: inner dimension mismatch");
  Node n = fresh(Op::Matmul, m, n2);
  matmul_kernel(na.val.data(), na.rows, na.cols, trans_a, nb.val.data(), nb.rows, nb.cols, trans_b,
                n.val.data(), false);
  const Vec* ta = tan_ptr(a);
  const Vec* tb = tan_ptr(b);
  if (ta || tb) {
    n.tan.assign(static_cast<size_t>(m * n2), 0.0);
    if (ta) {
      matmul_kernel(ta->data(), na.rows, na.cols, trans_a, nb.val.data(), nb.rows, nb.cols,
                    trans_b, n.tan.data(), true);
    }
    if (tb) {
      matmul_kernel(na.val.data(), na.rows, na.cols, trans_a, tb->data(), nb.rows, nb.cols,
                    trans_b, n.tan.data(), true);
    }
  }
  n.a = a.id;
  n.b = b.id;
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  return append_node(*a.tape, std::move(n));
}

Var sum(Var a) {
  const Vec& av = nd(a).val;
  Node n = fresh(Op::Sum, 1, 1);
  double s = 0.0;
  for (double v : av) s += v;
  n.val[0] = s;
  if (const Vec* ta = tan_ptr(a)) {
    double st = 0.0;
    for (double v : *ta) st += v;
    n.tan.assign(1, st);
  }
  n.a = a.id;
  return append_node(*a.tape, std::move(n));
}

Var rowsum(Var a) {
  const Node& na = nd(a);
  Node n = fresh(Op::RowSum, na.rows, 1);
  for (int64_t i = 0; i < na.rows; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < na.cols; ++j) s += na.val[static_cast<size_t>(i * na.cols + j)];
    n.val[static_cast<size_t>(i)] = s;
  }
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.resize(static_cast<size_t>(na.rows));
    for (int64_t i = 0; i < na.rows; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < na.cols; ++j) s += (*ta)[static_cast<size_t>(i * na.cols + j)];
      n.tan[static_cast<size_t>(i)] = s;
    }
  }
  n.a = a.id;
  return append_node(*a.tape, std::move(n));
}

Var colsum(Var a) {
  const Node& na = nd(a);
  Node n = fresh(Op::ColSum, 1, na.cols);
  for (int64_t i = 0; i < na.rows; ++i) {
    for (int64_t j = 0; j < na.cols; ++j) {
      n.val[static_cast<size_t>(j)] += na.val[static_cast<size_t>(i * na.cols + j)];
    }
  }
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.assign(static_cast<size_t>(na.cols), 0.0);
    for (int64_t i = 0; i < na.rows; ++i) {
      for (int64_t j = 0; j < na.cols; ++j) {
        n.tan[static_cast<size_t>(j)] += (*ta)[static_cast<size_t>(i * na.cols + j)];
      }
    }
  }
  n.a = a.id;
  return append_node(*a.tape, std::move(n));
}

Var rep_cols(Var a, int64_t k) {
  const Node& na = nd(a);
  require(na.cols == 1, "rep_cols: input must be a column");
  Node n = fresh(Op::RepCols, na.rows, k);
  for (int64_t i = 0; i < na.rows; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      n.val[static_cast<size_t>(i * k + j)] = na.val[static_cast<size_t>(i)];
    }
  }
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.resize(static_cast<size_t>(na.rows * k));
    for (int64_t i = 0; i < na.rows; ++i) {
      for (int64_t j = 0; j < k; ++j) {
        n.tan[static_cast<size_t>(i * k + j)] = (*ta)[static_cast<size_t>(i)];
      }
    }
  }
  n.a = a.id;
  return append_node(*a.tape, std::move(n));
}

Var rep_rows(Var a, int64_t r) {
  const Node& na = nd(a);
  require(na.rows == 1, "rep_rows: input must be a row");
  Node n = fresh(Op::RepRows, r, na.cols);
  for (int64_t i = 0; i < r; ++i) {
    std::memcpy(n.val.data() + i * na.cols, na.val.data(),
                static_cast<size_t>(na.cols) * sizeof(double));
  }
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.resize(static_cast<size_t>(r * na.cols));
    for (int64_t i = 0; i < r; ++i) {
      std::memcpy(n.tan.data() + i * na.cols, ta->data(),
                  static_cast<size_t>(na.cols) * sizeof(double));
    }
  }
  n.a = a.id;
  return append_node(*a.tape, std::move(n));
}

Var slice(Var a, int64_t offset, int64_t len) {
  const Node& na = nd(a);
  require(offset >= 0 && len >= 0 && offset + len <= numel(na), "slice: out of range");
  Node n = fresh(Op::Slice, len, 1);
  std::memcpy(n.val.data(), na.val.data() + offset, static_cast<size_t>(len) * sizeof(double));
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.resize(static_cast<size_t>(len));
    std::memcpy(n.tan.data(), ta->data() + offset, static_cast<size_t>(len) * sizeof(double));
  }
  n.a = a.id;
  n.i0 = offset;
  return append_node(*a.tape, std::move(n));
}

Var pad(Var a, int64_t offset, int64_t n_total) {
  const Node& na = nd(a);
  const int64_t len = numel(na);
  require(offset >= 0 && offset + len <= n_total, "pad: out of range");
  Node n = fresh(Op::Pad, n_total, 1);
  std::memcpy(n.val.data() + offset, na.val.data(), static_cast<size_t>(len) * sizeof(double));
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.assign(static_cast<size_t>(n_total), 0.0);
    std::memcpy(n.tan.data() + offset, ta->data(), static_cast<size_t>(len) * sizeof(double));
  }
  n.a = a.id;
  n.i0 = offset;
  n.i1 = n_total;
  return append_node(*a.tape, std::move(n));
}

Var reshape(Var a, int64_t r, int64_t c) {
  const Node& na = nd(a);
  require(r * c == numel(na), "reshape: element count mismatch");
  Node n = fresh(Op::Reshape, r, c);
  n.val = na.val;
  n.tan = na.tan;
  n.a = a.id;
  return append_node(*a.tape, std::move(n));
}

namespace {

// Shared row-wise softmax machinery; writes log-softmax into out.
void log_softmax_rows(const Vec& z, int64_t r, int64_t c, Vec& out) {
  for (int64_t i = 0; i < r; ++i) {
    const double* row = z.data() + i * c;
    double m = row[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    const double lse = m + std::log(s);
    for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(i * c + j)] = row[j] - lse;
  }
}

}  // namespace

Var log_softmax(Var a) {
  const Node& na = nd(a);
  Node n = fresh(Op::LogSoftmax, na.rows, na.cols);
  log_softmax_rows(na.val, na.rows, na.cols, n.val);
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.resize(n.val.size());
    for (int64_t i = 0; i < na.rows; ++i) {
      double acc = 0.0;
      for (int64_t j = 0; j < na.cols; ++j) {
        acc += std::exp(n.val[static_cast<size_t>(i * na.cols + j)]) *
               (*ta)[static_cast<size_t>(i * na.cols + j)];
      }
      for (int64_t j = 0; j < na.cols; ++j) {
        n.tan[static_cast<size_t>(i * na.cols + j)] =
            (*ta)[static_cast<size_t>(i * na.cols + j)] - acc;
      }
    }
  }
  n.a = a.id;
  return append_node(*a.tape, std::move(n));
}

Var softmax(Var a) {
  const Node& na = nd(a);
  Node n = fresh(Op::Softmax, na.rows, na.cols);
  log_softmax_rows(na.val, na.rows, na.cols, n.val);
  for (auto& v : n.val) v = std::exp(v);
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.resize(n.val.size());
    for (int64_t i = 0; i < na.rows; ++i) {
      double acc = 0.0;
      for (int64_t j = 0; j < na.cols; ++j) {
        acc += n.val[static_cast<size_t>(i * na.cols + j)] *
               (*ta)[static_cast<size_t>(i * na.cols + j)];
      }
      for (int64_t j = 0; j < na.cols; ++j) {
        const size_t idx = static_cast<size_t>(i * na.cols + j);
        n.tan[idx] = n.val[idx] * ((*ta)[idx] - acc);
      }
    }
  }
  n.a = a.id;
  return append_node(*a.tape, std::move(n));
}

Var pick(Var a, std::span<const int32_t> labels) {
  const Node& na = nd(a);
  require(static_cast<int64_t>(labels.size()) == na.rows, "pick: one label per row required");
  Node n = fresh(Op::Pick, na.rows, 1);
  for (int64_t i = 0; i < na.rows; ++i) {
    const int32_t lab = labels[static_cast<size_t>(i)];
    require(lab >= 0 && lab < na.cols, "pick: label out of range");
    n.val[static_cast<size_t>(i)] = na.val[static_cast<size_t>(i * na.cols + lab)];
  }
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.resize(static_cast<size_t>(na.rows));
    for (int64_t i = 0; i < na.rows; ++i) {
      n.tan[static_cast<size_t>(i)] =
          (*ta)[static_cast<size_t>(i * na.cols + labels[static_cast<size_t>(i)])];
    }
  }
  n.a = a.id;
  n.labels.assign(labels.begin(), labels.end());
  return append_node(*a.tape, std::move(n));
}

Var scatter_cols(Var a, std::span<const int32_t> labels, int64_t num_cols) {
  const Node& na = nd(a);
  require(na.cols == 1, "scatter_cols: input must be a column");
  require(static_cast<int64_t>(labels.size()) == na.rows, "scatter_cols: one label per row");
  Node n = fresh(Op::ScatterCols, na.rows, num_cols);
  for (int64_t i = 0; i < na.rows; ++i) {
    const int32_t lab = labels[static_cast<size_t>(i)];
    require(lab >= 0 && lab < num_cols, "scatter_cols: label out of range");
    n.val[static_cast<size_t>(i * num_cols + lab)] = na.val[static_cast<size_t>(i)];
  }
  if (const Vec* ta = tan_ptr(a)) {
    n.tan.assign(static_cast<size_t>(na.rows * num_cols), 0.0);
    for (int64_t i = 0; i < na.rows; ++i) {
      n.tan[static_cast<size_t>(i * num_cols + labels[static_cast<size_t>(i)])] =
          (*ta)[static_cast<size_t>(i)];
    }
  }
  n.a = a.id;
  n.labels.assign(labels.begin(), labels.end());
  return append_node(*a.tape, std::move(n));
}

Var bfill(Var scalar_var, int64_t r, int64_t c) {
  const Node& na = nd(scalar_var);
  require(numel(na) == 1, "bfill: input must be scalar");
  Node n = fresh(Op::Bfill, r, c);
  std::fill(n.val.begin(), n.val.end(), na.val[0]);
  if (const Vec* ta = tan_ptr(scalar_var)) {
    n.tan.assign(static_cast<size_t>(r * c), (*ta)[0]);
  }
  n.a = scalar_var.id;
  return append_node(*scalar_var.tape, std::move(n));
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

Var softmax_xent(Var logits, std::span<const int32_t> labels) {
  const int64_t batch = rows(logits);
  Var picked = pick(log_softmax(logits), labels);
  return smul(sum(picked), -1.0 / static_cast<double>(batch));
}

std::vector<Var> gradients(Var out, std::span<const Var> wrt) {
  require(out.valid(), "gradients: invalid output");
  Tape& tp = *out.tape;
  require(numel(tp.node(out.id)) == 1, "gradients: output must be scalar");

  const int32_t lim = out.id;
  std::vector<int32_t> adj(static_cast<size_t>(lim) + 1, -1);
  adj[static_cast<size_t>(out.id)] = tp.scalar_const(1.0).id;

  auto want = [&](int32_t p) { return p >= 0 && tp.node(p).req_grad; };
  auto acc = [&](int32_t p, Var contrib) {
    int32_t& slot = adj[static_cast<size_t>(p)];
    slot = slot < 0 ? contrib.id : add(Var{&tp, slot}, contrib).id;
  };

  for (int32_t id = lim; id >= 0; --id) {
    if (adj[static_cast<size_t>(id)] < 0) continue;
    // Copy POD fields: appends below may reallocate the node storage.
    const Node& n0 = tp.node(id);
    if (!n0.req_grad) continue;
    const Op op = n0.op;
    const int32_t pa = n0.a;
    const int32_t pb = n0.b;
    const bool ta = n0.trans_a;
    const bool tb = n0.trans_b;
    const int64_t i0 = n0.i0;
    const double sc = n0.scalar;
    const int64_t nc = n0.cols;
    std::vector<int32_t> labels;
    if (op == Op::Pick || op == Op::ScatterCols) labels = n0.labels;

    Var g{&tp, adj[static_cast<size_t>(id)]};
    Var self{&tp, id};
    Var A{&tp, pa};
    Var B{&tp, pb};

    switch (op) {
      case Op::Leaf:
      case Op::Step0:
        break;
      case Op::Add:
        if (want(pa)) acc(pa, g);
        if (want(pb)) acc(pb, g);
        break;
      case Op::Sub:
        if (want(pa)) acc(pa, g);
        if (want(pb)) acc(pb, neg(g));
        break;
      case Op::Mul:
        if (want(pa)) acc(pa, mul(g, B));
        if (want(pb)) acc(pb, mul(g, A));
        break;
      case Op::Div:
        if (want(pa)) acc(pa, div(g, B));
        if (want(pb)) acc(pb, neg(div(mul(g, A), mul(B, B))));
        break;
      case Op::Smul:
        if (want(pa)) acc(pa, smul(g, sc));
        break;
      case Op::Exp:
        if (want(pa)) acc(pa, mul(g, self));
        break;
      case Op::Log:
        if (want(pa)) acc(pa, div(g, A));
        break;
      case Op::Tanh:
        if (want(pa)) {
          Var one = tp.const_fill(1.0, rows(self), cols(self));
          acc(pa, mul(g, sub(one, mul(self, self))));
        }
        break;
      case Op::Relu:
        if (want(pa)) acc(pa, mul(g, step0(A)));
        break;
      case Op::Matmul:
        if (!ta && !tb) {
          if (want(pa)) acc(pa, matmul(g, B, false, true));
          if (want(pb)) acc(pb, matmul(A, g, true, false));
        } else if (ta && !tb) {
          if (want(pa)) acc(pa, matmul(B, g, false, true));
          if (want(pb)) acc(pb, matmul(A, g, false, false));
        } else if (!ta && tb) {
          if (want(pa)) acc(pa, matmul(g, B, false, false));
          if (want(pb)) acc(pb, matmul(g, A, true, false));
        } else {
          if (want(pa)) acc(pa, matmul(B, g, true, true));
          if (want(pb)) acc(pb, matmul(g, A, true, true));
        }
        break;
      case Op::Sum:
        if (want(pa)) acc(pa, bfill(g, rows(A), cols(A)));
        break;
      case Op::RowSum:
        if (want(pa)) acc(pa, rep_cols(g, cols(A)));
        break;
      case Op::ColSum:
        if (want(pa)) acc(pa, rep_rows(g, rows(A)));
        break;
      case Op::RepCols:
        if (want(pa)) acc(pa, rowsum(g));
        break;
      case Op::RepRows:
        if (want(pa)) acc(pa, colsum(g));
        break;
      case Op::Slice:
        if (want(pa)) {
          acc(pa, reshape(pad(g, i0, rows(A) * cols(A)), rows(A), cols(A)));
        }
        break;
      case Op::Pad:
        if (want(pa)) acc(pa, reshape(slice(g, i0, rows(A) * cols(A)), rows(A), cols(A)));
        break;
      case Op::Reshape:
        if (want(pa)) acc(pa, reshape(g, rows(A), cols(A)));
        break;
      case Op::LogSoftmax:
        if (want(pa)) {
          Var p = exp_(self);
          acc(pa, sub(g, mul(p, rep_cols(rowsum(g), nc))));
        }
        break;
      case Op::Softmax:
        if (want(pa)) {
          acc(pa, mul(self, sub(g, rep_cols(rowsum(mul(g, self)), nc))));
        }
        break;
      case Op::Pick:
        if (want(pa)) acc(pa, scatter_cols(g, labels, cols(A)));
        break;
      case Op::ScatterCols:
        if (want(pa)) acc(pa, pick(g, labels));
        break;
      case Op::Bfill:
        if (want(pa)) acc(pa, sum(g));
        break;
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (Var w : wrt) {
    require(w.tape == &tp, "gradients: wrt recorded on a different tape");
    if (w.id <= lim && adj[static_cast<size_t>(w.id)] >= 0) {
      result.push_back(Var{&tp, adj[static_cast<size_t>(w.id)]});
    } else {
      result.push_back(tp.const_fill(0.0, rows(w), cols(w)));
    }
  }
  return result;
}

Vec grad(const std::function<Var(Tape&, Var)>& f, std::span<const double> at) {
  Tape tp;
  Var x = tp.input(at, static_cast<int64_t>(at.size()), 1);
  Var y = f(tp, x);
  const std::array<Var, 1> wrt{x};
  return value(gradients(y, wrt)[0]);
}

}  // namespace revlearn::ad
