#include "prime/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "prime/errors.hpp"

namespace prime {
namespace {

void require_matrix(const Tensor& t, const char* what) {
  require(t.rank() == 2, std::string(what) + " expects a rank-2 tensor, got " +
                             shape_string(t.shape()));
}

void accumulate(Tensor& into, const Tensor& g) {
  if (into.size() == 0 && g.size() != 0) {
    into = g;
    return;
  }
  auto dst = into.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor& slot(std::vector<Tensor>& grads, const Tape& tape, NodeId id) {
  if (grads[id].size() == 0) grads[id] = Tensor::zeros_like(tape.value(id));
  return grads[id];
}

}  // namespace

const TapeNode& Tape::node(NodeId id) const {
  require(id < nodes_.size(), "unknown tape node " + std::to_string(id));
  return nodes_[id];
}

NodeId Tape::push(TapeNode n) {
  const NodeId id = nodes_.size();
  if (!n.value.all_finite()) {
    throw NumericFault("non-finite value produced at node " + std::to_string(id), id);
  }
  nodes_.push_back(std::move(n));
  return id;
}

NodeId Tape::leaf(Tensor value) {
  TapeNode n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  require(A.dim(1) == B.dim(0), "matmul inner dimensions differ: " +
                                    shape_string(A.shape()) + " x " +
                                    shape_string(B.shape()));
  const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
  Tensor C({n, m});
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* pc = C.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  TapeNode node;
  node.op = Op::kMatMul;
  node.inputs = {a, b};
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.same_shape(B), "add shape mismatch: " + shape_string(A.shape()) +
                               " vs " + shape_string(B.shape()));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  TapeNode node;
  node.op = Op::kAdd;
  node.inputs = {a, b};
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::add_bias(NodeId x, NodeId bias) {
  const Tensor& X = value(x);
  const Tensor& b = value(bias);
  require_matrix(X, "add_bias");
  require(b.size() == X.dim(1), "add_bias: bias length " + std::to_string(b.size()) +
                                    " vs " + std::to_string(X.dim(1)) + " columns");
  Tensor C = X;
  const std::size_t m = X.dim(1);
  for (std::size_t i = 0; i < X.dim(0); ++i)
    for (std::size_t j = 0; j < m; ++j) C[i * m + j] += b[j];
  TapeNode node;
  node.op = Op::kAddBias;
  node.inputs = {x, bias};
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::tanh(NodeId x) {
  Tensor C = value(x);
  for (double& v : C.values()) v = std::tanh(v);
  TapeNode node;
  node.op = Op::kTanh;
  node.inputs = {x};
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::log_softmax(NodeId x) {
  const Tensor& X = value(x);
  require(X.rank() == 1 || X.rank() == 2, "log_softmax expects rank 1 or 2");
  Tensor C = X;
  const std::size_t n = X.rows(), m = X.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = C.data().data() + i * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) row[j] -= lse;
  }
  TapeNode node;
  node.op = Op::kLogSoftmax;
  node.inputs = {x};
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::gather_rows(NodeId table, std::vector<std::size_t> ids,
                         std::size_t per_row) {
  const Tensor& T = value(table);
  require_matrix(T, "gather_rows");
  require(per_row > 0 && ids.size() % per_row == 0,
          "gather_rows: id count not a multiple of per_row");
  const std::size_t d = T.dim(1);
  const std::size_t n = ids.size() / per_row;
  Tensor C({n, per_row * d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] < T.dim(0), "gather_rows: id " + std::to_string(ids[r]) +
                                   " out of range " + std::to_string(T.dim(0)));
    std::copy_n(T.data().data() + ids[r] * d, d, C.data().data() + r * d);
  }
  TapeNode node;
  node.op = Op::kGatherRows;
  node.inputs = {table};
  node.value = std::move(C);
  node.index = std::move(ids);
  return push(std::move(node));
}

NodeId Tape::gather_cols(NodeId x, std::vector<std::size_t> cols) {
  const Tensor& X = value(x);
  require(X.rank() == 1 || X.rank() == 2, "gather_cols expects rank 1 or 2");
  require(cols.size() == X.rows(), "gather_cols: one column per row required");
  Tensor C({X.rows(), 1});
  for (std::size_t r = 0; r < cols.size(); ++r) {
    require(cols[r] < X.cols(), "gather_cols: column out of range");
    C[r] = X.at(r, cols[r]);
  }
  TapeNode node;
  node.op = Op::kGatherCols;
  node.inputs = {x};
  node.value = std::move(C);
  node.index = std::move(cols);
  return push(std::move(node));
}

NodeId Tape::sum(NodeId x) {
  double s = 0.0;
  for (double v : value(x).values()) s += v;
  TapeNode node;
  node.op = Op::kSum;
  node.inputs = {x};
  node.value = Tensor::scalar(s);
  return push(std::move(node));
}

NodeId Tape::scale(NodeId x, double c) {
  Tensor C = value(x);
  for (double& v : C.values()) v *= c;
  TapeNode node;
  node.op = Op::kScale;
  node.inputs = {x};
  node.value = std::move(C);
  node.factor = c;
  return push(std::move(node));
}

Gradients backward(const Tape& tape, NodeId loss) {
  require(loss < tape.size(), "backward: unknown loss node");
  require(tape.value(loss).size() == 1,
          "backward: loss must be scalar, got " + shape_string(tape.value(loss).shape()));

  std::vector<Tensor> g(tape.size());
  g[loss] = Tensor(tape.value(loss).shape(), 1.0);

  for (NodeId id = loss + 1; id-- > 0;) {
    if (g[id].size() == 0) continue;
    const Tensor& up = g[id];
    if (!up.all_finite()) {
      throw NumericFault("non-finite gradient at node " + std::to_string(id), id);
    }
    const TapeNode& n = tape.node(id);
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        const Tensor& A = tape.value(n.inputs[0]);
        const Tensor& B = tape.value(n.inputs[1]);
        const std::size_t rows = A.dim(0), k = A.dim(1), m = B.dim(1);
        Tensor dA({rows, k});
        Tensor dB({k, m});
        const double* pu = up.data().data();
        const double* pa = A.data().data();
        const double* pb = B.data().data();
        for (std::size_t i = 0; i < rows; ++i) {
          const double* urow = pu + i * m;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = pb + p * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += urow[j] * brow[j];
            dA[i * k + p] = acc;
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            double* dbrow = dB.data().data() + p * m;
            for (std::size_t j = 0; j < m; ++j) dbrow[j] += av * urow[j];
          }
        }
        accumulate(g[n.inputs[0]], dA);
        accumulate(g[n.inputs[1]], dB);
        break;
      }
      case Op::kAdd:
        accumulate(g[n.inputs[0]], up);
        accumulate(g[n.inputs[1]], up);
        break;
      case Op::kAddBias: {
        accumulate(g[n.inputs[0]], up);
        Tensor& db = slot(g, tape, n.inputs[1]);
        const std::size_t m = up.dim(1);
        for (std::size_t i = 0; i < up.dim(0); ++i)
          for (std::size_t j = 0; j < m; ++j) db[j] += up[i * m + j];
        break;
      }
      case Op::kTanh: {
        Tensor dx = up;
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const double y = n.value[i];
          dx[i] *= 1.0 - y * y;
        }
        accumulate(g[n.inputs[0]], dx);
        break;
      }
      case Op::kLogSoftmax: {
        // dx_j = u_j - softmax_j * sum(u)
        Tensor dx = up;
        const std::size_t rows = n.value.rows(), m = n.value.cols();
        for (std::size_t i = 0; i < rows; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += up[i * m + j];
          for (std::size_t j = 0; j < m; ++j)
            dx[i * m + j] -= std::exp(n.value[i * m + j]) * s;
        }
        accumulate(g[n.inputs[0]], dx);
        break;
      }
      case Op::kGatherRows: {
        Tensor& dt = slot(g, tape, n.inputs[0]);
        const std::size_t d = tape.value(n.inputs[0]).dim(1);
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          double* dst = dt.data().data() + n.index[r] * d;
          const double* src = up.data().data() + r * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::kGatherCols: {
        Tensor& dx = slot(g, tape, n.inputs[0]);
        const std::size_t m = dx.cols();
        for (std::size_t r = 0; r < n.index.size(); ++r) dx[r * m + n.index[r]] += up[r];
        break;
      }
      case Op::kSum: {
        Tensor& dx = slot(g, tape, n.inputs[0]);
        const double u = up[0];
        for (double& v : dx.values()) v += u;
        break;
      }
      case Op::kScale: {
        Tensor dx = up;
        for (double& v : dx.values()) v *= n.factor;
        accumulate(g[n.inputs[0]], dx);
        break;
      }
    }
  }

  for (NodeId id = 0; id < tape.size(); ++id) {
    if (g[id].size() == 0) g[id] = Tensor::zeros_like(tape.value(id));
  }
  return Gradients(std::move(g));
}

double grad_check(const std::function<double(const Tensor&)>& f,
                  const Tensor& analytic, const Tensor& params, double eps) {
  require(eps >= 1e-8 && eps <= 1e-3, "grad_check: eps must lie in [1e-8, 1e-3]");
  require(analytic.size() == params.size(), "grad_check: gradient/param size mismatch");
  Tensor probe = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + eps;
    const double up = f(probe);
    probe[i] = params[i] - eps;
    const double down = f(probe);
    probe[i] = params[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericFault("grad_check: objective returned a non-finite value");
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check(const std::function<NodeId(Tape&, NodeId)>& build,
                  const Tensor& params, double eps) {
  Tape tape;
  const NodeId p = tape.leaf(params);
  const NodeId loss = build(tape, p);
  const Tensor analytic = backward(tape, loss)[p];
  auto f = [&build](const Tensor& x) {
    Tape t;
    const NodeId leaf = t.leaf(x);
    return t.value(build(t, leaf)).item();
  };
  return grad_check(f, analytic, params, eps);
}

}  // namespace prime
