#include "nctrl/tape.hpp"

#include <cmath>
#include <numbers>

#include "nctrl/error.hpp"
#include "nctrl/hmm_kernel.hpp"

namespace nctrl {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got " +
                             shape_str(t.shape));
}

}  // namespace

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Tape::leaf(Tensor v, bool trainable) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(v);
  n.trainable = trainable;
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor &ta = v(a), &tb = v(b);
  require_matrix(ta, "matmul");
  require_matrix(tb, "matmul");
  require(ta.cols() == tb.rows(), "matmul: " + shape_str(ta.shape) + " * " +
                                      shape_str(tb.shape));
  Node n;
  n.op = Op::kMatMul;
  n.in = {a, b};
  n.val = Tensor({ta.rows(), tb.cols()}, 0.0);
  const std::size_t r = ta.rows(), k_dim = ta.cols(), c = tb.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double* out = n.val.row_ptr(i);
    const double* arow = ta.row_ptr(i);
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = tb.row_ptr(k);
      for (std::size_t j = 0; j < c; ++j) out[j] += aik * brow[j];
    }
  }
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor &ta = v(a), &tb = v(b);
  require(ta.same_shape(tb),
          "add: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Node n;
  n.op = Op::kAdd;
  n.in = {a, b};
  n.val = ta;
  for (std::size_t i = 0; i < n.val.numel(); ++i) n.val.values[i] += tb.values[i];
  return push(std::move(n));
}

NodeId Tape::add_row(NodeId a, NodeId row) {
  const Tensor &ta = v(a), &tr = v(row);
  require_matrix(ta, "add_row");
  require(tr.rank() == 2 && tr.rows() == 1 && tr.cols() == ta.cols(),
          "add_row: " + shape_str(ta.shape) + " + " + shape_str(tr.shape));
  Node n;
  n.op = Op::kAddRow;
  n.in = {a, row};
  n.val = ta;
  for (std::size_t i = 0; i < ta.rows(); ++i) {
    double* out = n.val.row_ptr(i);
    for (std::size_t j = 0; j < ta.cols(); ++j) out[j] += tr.values[j];
  }
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor &ta = v(a), &tb = v(b);
  require(ta.same_shape(tb),
          "sub: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Node n;
  n.op = Op::kSub;
  n.in = {a, b};
  n.val = ta;
  for (std::size_t i = 0; i < n.val.numel(); ++i) n.val.values[i] -= tb.values[i];
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor &ta = v(a), &tb = v(b);
  require(ta.same_shape(tb),
          "mul: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Node n;
  n.op = Op::kMul;
  n.in = {a, b};
  n.val = ta;
  for (std::size_t i = 0; i < n.val.numel(); ++i) n.val.values[i] *= tb.values[i];
  return push(std::move(n));
}

NodeId Tape::mul_scalar_node(NodeId a, NodeId s) {
  const Tensor &ta = v(a), &ts = v(s);
  require(ts.is_scalar(), "mul_scalar_node: scalar operand has shape " +
                              shape_str(ts.shape));
  Node n;
  n.op = Op::kMulScalarNode;
  n.in = {a, s};
  n.val = ta;
  const double sv = ts.values[0];
  for (double& x : n.val.values) x *= sv;
  return push(std::move(n));
}

NodeId Tape::neg(NodeId a) { return scale_add(a, -1.0, 0.0); }

NodeId Tape::exp(NodeId a) {
  Node n;
  n.op = Op::kExp;
  n.in = {a};
  n.val = v(a);
  for (double& x : n.val.values) x = std::exp(x);
  return push(std::move(n));
}

NodeId Tape::log(NodeId a) {
  Node n;
  n.op = Op::kLog;
  n.in = {a};
  n.val = v(a);
  for (double& x : n.val.values) {
    if (!(x > 0.0))
      throw ValueError("log: non-positive input " + std::to_string(x));
    x = std::log(x);
  }
  return push(std::move(n));
}

NodeId Tape::abs(NodeId a) {
  Node n;
  n.op = Op::kAbs;
  n.in = {a};
  n.val = v(a);
  for (double& x : n.val.values) x = std::abs(x);
  return push(std::move(n));
}

NodeId Tape::square(NodeId a) {
  Node n;
  n.op = Op::kSquare;
  n.in = {a};
  n.val = v(a);
  for (double& x : n.val.values) x = x * x;
  return push(std::move(n));
}

NodeId Tape::leaky_relu(NodeId a, double slope) {
  Node n;
  n.op = Op::kLeakyRelu;
  n.in = {a};
  n.a = slope;
  n.val = v(a);
  for (double& x : n.val.values) x = x > 0.0 ? x : slope * x;
  return push(std::move(n));
}

NodeId Tape::leaky_relu_grad(NodeId a, double slope) {
  Node n;
  n.op = Op::kLeakyReluGrad;
  n.in = {a};
  n.a = slope;
  n.val = v(a);
  for (double& x : n.val.values) x = x > 0.0 ? 1.0 : slope;
  return push(std::move(n));
}

NodeId Tape::clamp(NodeId a, double lo, double hi) {
  require(lo < hi, "clamp: lo >= hi");
  Node n;
  n.op = Op::kClamp;
  n.in = {a};
  n.a = lo;
  n.b = hi;
  n.val = v(a);
  for (double& x : n.val.values) x = x < lo ? lo : (x > hi ? hi : x);
  return push(std::move(n));
}

NodeId Tape::scale_add(NodeId a, double scale, double shift) {
  Node n;
  n.op = Op::kScaleAdd;
  n.in = {a};
  n.a = scale;
  n.b = shift;
  n.val = v(a);
  for (double& x : n.val.values) x = scale * x + shift;
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  Node n;
  n.op = Op::kSum;
  n.in = {a};
  double s = 0.0;
  for (double x : v(a).values) s += x;
  n.val = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Tape::mean(NodeId a) {
  require(v(a).numel() > 0, "mean: empty tensor");
  Node n;
  n.op = Op::kMean;
  n.in = {a};
  double s = 0.0;
  for (double x : v(a).values) s += x;
  n.val = Tensor::scalar(s / static_cast<double>(v(a).numel()));
  return push(std::move(n));
}

NodeId Tape::row_sum(NodeId a) {
  const Tensor& ta = v(a);
  require_matrix(ta, "row_sum");
  Node n;
  n.op = Op::kRowSum;
  n.in = {a};
  n.val = Tensor({ta.rows(), 1}, 0.0);
  for (std::size_t i = 0; i < ta.rows(); ++i) {
    double s = 0.0;
    const double* row = ta.row_ptr(i);
    for (std::size_t j = 0; j < ta.cols(); ++j) s += row[j];
    n.val.values[i] = s;
  }
  return push(std::move(n));
}

NodeId Tape::logsumexp_rows(NodeId a) {
  const Tensor& ta = v(a);
  require_matrix(ta, "logsumexp_rows");
  Node n;
  n.op = Op::kLogSumExpRows;
  n.in = {a};
  n.val = Tensor({ta.rows(), 1});
  for (std::size_t i = 0; i < ta.rows(); ++i)
    n.val.values[i] = logsumexp(ta.row_ptr(i), ta.cols());
  return push(std::move(n));
}

NodeId Tape::logsumexp_all(NodeId a) {
  const Tensor& ta = v(a);
  require(ta.numel() > 0, "logsumexp_all: empty tensor");
  Node n;
  n.op = Op::kLogSumExpAll;
  n.in = {a};
  n.val = Tensor::scalar(logsumexp(ta.values.data(), ta.numel()));
  return push(std::move(n));
}

NodeId Tape::hstack(const std::vector<NodeId>& parts) {
  require(!parts.empty(), "hstack: no inputs");
  const std::size_t r = v(parts[0]).rows();
  std::size_t total = 0;
  for (NodeId p : parts) {
    require_matrix(v(p), "hstack");
    require(v(p).rows() == r, "hstack: row mismatch " + shape_str(v(p).shape));
    total += v(p).cols();
  }
  Node n;
  n.op = Op::kHStack;
  n.in = parts;
  n.val = Tensor({r, total});
  for (NodeId p : parts) n.idx.push_back(v(p).cols());
  for (std::size_t i = 0; i < r; ++i) {
    double* out = n.val.row_ptr(i);
    std::size_t off = 0;
    for (NodeId p : parts) {
      const Tensor& tp = v(p);
      const double* src = tp.row_ptr(i);
      for (std::size_t j = 0; j < tp.cols(); ++j) out[off + j] = src[j];
      off += tp.cols();
    }
  }
  return push(std::move(n));
}

NodeId Tape::vstack(const std::vector<NodeId>& parts) {
  require(!parts.empty(), "vstack: no inputs");
  const std::size_t c = v(parts[0]).cols();
  std::size_t total = 0;
  for (NodeId p : parts) {
    require_matrix(v(p), "vstack");
    require(v(p).cols() == c, "vstack: col mismatch " + shape_str(v(p).shape));
    total += v(p).rows();
  }
  Node n;
  n.op = Op::kVStack;
  n.in = parts;
  n.val = Tensor({total, c});
  std::size_t off = 0;
  for (NodeId p : parts) {
    const Tensor& tp = v(p);
    n.idx.push_back(tp.rows());
    for (std::size_t i = 0; i < tp.rows(); ++i)
      for (std::size_t j = 0; j < c; ++j) n.val.at(off + i, j) = tp.at(i, j);
    off += tp.rows();
  }
  return push(std::move(n));
}

NodeId Tape::sub_col(NodeId a, NodeId col) {
  const Tensor &ta = v(a), &tc = v(col);
  require_matrix(ta, "sub_col");
  require(tc.rank() == 2 && tc.cols() == 1 && tc.rows() == ta.rows(),
          "sub_col: " + shape_str(ta.shape) + " - " + shape_str(tc.shape));
  Node n;
  n.op = Op::kSubCol;
  n.in = {a, col};
  n.val = ta;
  for (std::size_t i = 0; i < ta.rows(); ++i) {
    double* row = n.val.row_ptr(i);
    const double cv = tc.values[i];
    for (std::size_t j = 0; j < ta.cols(); ++j) row[j] -= cv;
  }
  return push(std::move(n));
}

NodeId Tape::slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
  const Tensor& ta = v(a);
  require_matrix(ta, "slice_cols");
  require(c0 < c1 && c1 <= ta.cols(), "slice_cols: [" + std::to_string(c0) +
                                          "," + std::to_string(c1) + ") of " +
                                          shape_str(ta.shape));
  Node n;
  n.op = Op::kSliceCols;
  n.in = {a};
  n.idx = {c0, c1};
  n.val = Tensor({ta.rows(), c1 - c0});
  for (std::size_t i = 0; i < ta.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) n.val.at(i, j - c0) = ta.at(i, j);
  return push(std::move(n));
}

NodeId Tape::slice_rows(NodeId a, std::size_t r0, std::size_t r1) {
  const Tensor& ta = v(a);
  require_matrix(ta, "slice_rows");
  require(r0 < r1 && r1 <= ta.rows(), "slice_rows: [" + std::to_string(r0) +
                                          "," + std::to_string(r1) + ") of " +
                                          shape_str(ta.shape));
  Node n;
  n.op = Op::kSliceRows;
  n.in = {a};
  n.idx = {r0, r1};
  n.val = Tensor({r1 - r0, ta.cols()});
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = 0; j < ta.cols(); ++j) n.val.at(i - r0, j) = ta.at(i, j);
  return push(std::move(n));
}

NodeId Tape::gather_rows(NodeId table, std::vector<std::size_t> rows) {
  const Tensor& tt = v(table);
  require_matrix(tt, "gather_rows");
  for (std::size_t r : rows)
    require(r < tt.rows(), "gather_rows: index " + std::to_string(r) +
                               " out of range for " + shape_str(tt.shape));
  Node n;
  n.op = Op::kGatherRows;
  n.in = {table};
  n.val = Tensor({rows.size(), tt.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < tt.cols(); ++j)
      n.val.at(i, j) = tt.at(rows[i], j);
  n.idx = std::move(rows);
  return push(std::move(n));
}

NodeId Tape::hmm_log_likelihood(NodeId emit, NodeId log_trans, NodeId log_init) {
  const FbResult fb =
      forward_backward_kernel(v(log_init), v(log_trans), v(emit), false);
  Node n;
  n.op = Op::kHmmLogLik;
  n.in = {emit, log_trans, log_init};
  n.val = Tensor::scalar(fb.log_likelihood);
  Tensor init_grad({1, v(log_init).numel()});
  for (std::size_t j = 0; j < init_grad.numel(); ++j)
    init_grad.values[j] = fb.gamma.at(0, j);
  n.cache = {fb.gamma, fb.xi_sum, std::move(init_grad)};
  return push(std::move(n));
}

std::vector<Tensor> Tape::backward(NodeId out) const {
  require(out < nodes_.size(), "backward: bad node id");
  require(v(out).is_scalar(),
          "backward: output must be scalar, got " + shape_str(v(out).shape));

  std::vector<Tensor> grad(nodes_.size());
  auto touch = [&](NodeId id) -> Tensor& {
    if (grad[id].empty()) grad[id] = Tensor(nodes_[id].val.shape, 0.0);
    return grad[id];
  };
  grad[out] = Tensor(v(out).shape, 0.0);
  grad[out].values[0] = 1.0;

  for (std::size_t id = out + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (grad[id].empty() || n.op == Op::kLeaf) continue;
    const Tensor& g = grad[id];
    switch (n.op) {
      case Op::kMatMul: {
        const Tensor &ta = v(n.in[0]), &tb = v(n.in[1]);
        Tensor& ga = touch(n.in[0]);
        Tensor& gb = touch(n.in[1]);
        const std::size_t r = ta.rows(), k_dim = ta.cols(), c = tb.cols();
        // dA += g * B^T
        for (std::size_t i = 0; i < r; ++i) {
          const double* grow = g.row_ptr(i);
          double* garow = ga.row_ptr(i);
          for (std::size_t k = 0; k < k_dim; ++k) {
            const double* brow = tb.row_ptr(k);
            double acc = 0.0;
            for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
            garow[k] += acc;
          }
        }
        // dB += A^T * g
        for (std::size_t i = 0; i < r; ++i) {
          const double* arow = ta.row_ptr(i);
          const double* grow = g.row_ptr(i);
          for (std::size_t k = 0; k < k_dim; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            double* gbrow = gb.row_ptr(k);
            for (std::size_t j = 0; j < c; ++j) gbrow[j] += aik * grow[j];
          }
        }
        break;
      }
      case Op::kAdd: {
        Tensor& ga = touch(n.in[0]);
        Tensor& gb = touch(n.in[1]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga.values[i] += g.values[i];
          gb.values[i] += g.values[i];
        }
        break;
      }
      case Op::kAddRow: {
        Tensor& ga = touch(n.in[0]);
        Tensor& gr = touch(n.in[1]);
        const std::size_t r = g.rows(), c = g.cols();
        for (std::size_t i = 0; i < r; ++i) {
          const double* grow = g.row_ptr(i);
          double* garow = ga.row_ptr(i);
          for (std::size_t j = 0; j < c; ++j) {
            garow[j] += grow[j];
            gr.values[j] += grow[j];
          }
        }
        break;
      }
      case Op::kSub: {
        Tensor& ga = touch(n.in[0]);
        Tensor& gb = touch(n.in[1]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga.values[i] += g.values[i];
          gb.values[i] -= g.values[i];
        }
        break;
      }
      case Op::kMul: {
        const Tensor &ta = v(n.in[0]), &tb = v(n.in[1]);
        Tensor& ga = touch(n.in[0]);
        Tensor& gb = touch(n.in[1]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga.values[i] += g.values[i] * tb.values[i];
          gb.values[i] += g.values[i] * ta.values[i];
        }
        break;
      }
      case Op::kMulScalarNode: {
        const Tensor& ta = v(n.in[0]);
        const double sv = v(n.in[1]).values[0];
        Tensor& ga = touch(n.in[0]);
        Tensor& gs = touch(n.in[1]);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga.values[i] += g.values[i] * sv;
          acc += g.values[i] * ta.values[i];
        }
        gs.values[0] += acc;
        break;
      }
      case Op::kExp: {
        Tensor& ga = touch(n.in[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          ga.values[i] += g.values[i] * n.val.values[i];
        break;
      }
      case Op::kLog: {
        const Tensor& ta = v(n.in[0]);
        Tensor& ga = touch(n.in[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          ga.values[i] += g.values[i] / ta.values[i];
        break;
      }
      case Op::kAbs: {
        const Tensor& ta = v(n.in[0]);
        Tensor& ga = touch(n.in[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double x = ta.values[i];
          const double sgn = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
          ga.values[i] += g.values[i] * sgn;
        }
        break;
      }
      case Op::kSquare: {
        const Tensor& ta = v(n.in[0]);
        Tensor& ga = touch(n.in[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          ga.values[i] += 2.0 * g.values[i] * ta.values[i];
        break;
      }
      case Op::kLeakyRelu: {
        const Tensor& ta = v(n.in[0]);
        Tensor& ga = touch(n.in[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          ga.values[i] += g.values[i] * (ta.values[i] > 0.0 ? 1.0 : n.a);
        break;
      }
      case Op::kLeakyReluGrad:
        // Piecewise constant in its input: derivative vanishes a.e.
        break;
      case Op::kClamp: {
        const Tensor& ta = v(n.in[0]);
        Tensor& ga = touch(n.in[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double x = ta.values[i];
          if (x > n.a && x < n.b) ga.values[i] += g.values[i];
        }
        break;
      }
      case Op::kScaleAdd: {
        Tensor& ga = touch(n.in[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          ga.values[i] += g.values[i] * n.a;
        break;
      }
      case Op::kSum: {
        Tensor& ga = touch(n.in[0]);
        const double gv = g.values[0];
        for (double& x : ga.values) x += gv;
        break;
      }
      case Op::kMean: {
        Tensor& ga = touch(n.in[0]);
        const double gv = g.values[0] / static_cast<double>(ga.numel());
        for (double& x : ga.values) x += gv;
        break;
      }
      case Op::kRowSum: {
        Tensor& ga = touch(n.in[0]);
        for (std::size_t i = 0; i < ga.rows(); ++i) {
          const double gv = g.values[i];
          double* row = ga.row_ptr(i);
          for (std::size_t j = 0; j < ga.cols(); ++j) row[j] += gv;
        }
        break;
      }
      case Op::kLogSumExpRows: {
        const Tensor& ta = v(n.in[0]);
        Tensor& ga = touch(n.in[0]);
        for (std::size_t i = 0; i < ta.rows(); ++i) {
          const double lse = n.val.values[i];
          const double gv = g.values[i];
          const double* row = ta.row_ptr(i);
          double* grow = ga.row_ptr(i);
          for (std::size_t j = 0; j < ta.cols(); ++j)
            grow[j] += gv * std::exp(row[j] - lse);
        }
        break;
      }
      case Op::kLogSumExpAll: {
        const Tensor& ta = v(n.in[0]);
        Tensor& ga = touch(n.in[0]);
        const double lse = n.val.values[0];
        const double gv = g.values[0];
        for (std::size_t i = 0; i < ta.numel(); ++i)
          ga.values[i] += gv * std::exp(ta.values[i] - lse);
        break;
      }
      case Op::kHStack: {
        std::size_t off = 0;
        for (std::size_t p = 0; p < n.in.size(); ++p) {
          Tensor& gp = touch(n.in[p]);
          const std::size_t w = n.idx[p];
          for (std::size_t i = 0; i < gp.rows(); ++i) {
            const double* grow = g.row_ptr(i);
            double* gprow = gp.row_ptr(i);
            for (std::size_t j = 0; j < w; ++j) gprow[j] += grow[off + j];
          }
          off += w;
        }
        break;
      }
      case Op::kVStack: {
        std::size_t off = 0;
        for (std::size_t p = 0; p < n.in.size(); ++p) {
          Tensor& gp = touch(n.in[p]);
          const std::size_t h = n.idx[p];
          for (std::size_t i = 0; i < h; ++i) {
            const double* grow = g.row_ptr(off + i);
            double* gprow = gp.row_ptr(i);
            for (std::size_t j = 0; j < g.cols(); ++j) gprow[j] += grow[j];
          }
          off += h;
        }
        break;
      }
      case Op::kSubCol: {
        Tensor& ga = touch(n.in[0]);
        Tensor& gc = touch(n.in[1]);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          const double* grow = g.row_ptr(i);
          double* garow = ga.row_ptr(i);
          double acc = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j) {
            garow[j] += grow[j];
            acc += grow[j];
          }
          gc.values[i] -= acc;
        }
        break;
      }
      case Op::kSliceCols: {
        Tensor& ga = touch(n.in[0]);
        const std::size_t c0 = n.idx[0];
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j)
            ga.at(i, c0 + j) += g.at(i, j);
        break;
      }
      case Op::kSliceRows: {
        Tensor& ga = touch(n.in[0]);
        const std::size_t r0 = n.idx[0];
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j)
            ga.at(r0 + i, j) += g.at(i, j);
        break;
      }
      case Op::kGatherRows: {
        Tensor& ga = touch(n.in[0]);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          double* dst = ga.row_ptr(n.idx[i]);
          const double* src = g.row_ptr(i);
          for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
        }
        break;
      }
      case Op::kHmmLogLik: {
        const double gv = g.values[0];
        Tensor& ge = touch(n.in[0]);
        Tensor& gt = touch(n.in[1]);
        Tensor& gi = touch(n.in[2]);
        const Tensor& gamma = n.cache[0];
        const Tensor& xi_sum = n.cache[1];
        const Tensor& init_grad = n.cache[2];
        for (std::size_t i = 0; i < ge.numel(); ++i)
          ge.values[i] += gv * gamma.values[i];
        for (std::size_t i = 0; i < gt.numel(); ++i)
          gt.values[i] += gv * xi_sum.values[i];
        for (std::size_t i = 0; i < gi.numel(); ++i)
          gi.values[i] += gv * init_grad.values[i];
        break;
      }
      case Op::kLeaf:
        break;
    }
  }
  return grad;
}

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)

NodeId gaussian_neg_terms(Tape& t, NodeId x, NodeId mean, NodeId log_var) {
  // 0.5*ln(2pi) + 0.5*log_var + 0.5*(x-mean)^2 * exp(-log_var), per entry.
  NodeId d2 = t.square(t.sub(x, mean));
  NodeId inv_var = t.exp(t.neg(log_var));
  NodeId quad = t.scale_add(t.mul(d2, inv_var), 0.5, 0.0);
  NodeId lv = t.scale_add(log_var, 0.5, kHalfLog2Pi);
  return t.add(lv, quad);
}
}  // namespace

NodeId gaussian_log_density(Tape& t, NodeId x, NodeId mean, NodeId log_var) {
  return t.neg(t.sum(gaussian_neg_terms(t, x, mean, log_var)));
}

NodeId gaussian_log_density_rows(Tape& t, NodeId x, NodeId mean, NodeId log_var) {
  return t.neg(t.row_sum(gaussian_neg_terms(t, x, mean, log_var)));
}

}  // namespace nctrl
