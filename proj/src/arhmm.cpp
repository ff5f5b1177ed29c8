#include "nctrl/arhmm.hpp"

#include <cmath>

#include "nctrl/error.hpp"

namespace nctrl {

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;
}  // namespace

void init_arhmm(ParamStore& store, const ArhmmSpec& spec, Rng& rng) {
  Tensor log_a({spec.c, spec.c}, 0.0);
  for (std::size_t i = 0; i < spec.c; ++i)
    log_a.at(i, i) = spec.diag_logit_boost;  // persistence prior
  store.add("arhmm.logA", std::move(log_a));
  store.add("arhmm.logpi", Tensor({1, spec.c}, 0.0));
  for (std::size_t r = 0; r < spec.c; ++r) {
    init_mlp(store, em_prefix(r), spec.emission_spec(), rng);
    const std::size_t last = spec.emission_spec().layer_count() - 1;
    Tensor& bias = store.get(em_prefix(r) + ".b" + std::to_string(last));
    for (std::size_t j = 0; j < spec.m; ++j)
      bias.at(0, j) = spec.init_mean_spread * rng.normal();
  }
  store.add("arhmm.init_mean", Tensor({spec.c, spec.m}, 0.0));
  store.add("arhmm.init_logvar", Tensor({spec.c, spec.m}, 0.0));
}

// --- plain inference -------------------------------------------------------

namespace {

Tensor normalize_log_rows(const Tensor& logits) {
  Tensor out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const double lse = logsumexp(out.row_ptr(i), out.cols());
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) -= lse;
  }
  return out;
}

double clamp_val(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

// Row-wise diagonal-Gaussian log density of x under (mean | logvar) halves
// of a network output.
void gaussian_rows_from_net(const Tensor& net_out, const Tensor& x,
                            const ArhmmSpec& spec, double* out) {
  const std::size_t m = spec.m;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* o = net_out.row_ptr(i);
    const double* xi = x.row_ptr(i);
    double acc = 0.0;
    for (std::size_t d = 0; d < m; ++d) {
      const double lv = clamp_val(o[m + d], spec.logvar_lo, spec.logvar_hi);
      const double diff = xi[d] - o[d];
      acc -= kHalfLog2Pi + 0.5 * lv + 0.5 * diff * diff * std::exp(-lv);
    }
    out[i] = acc;
  }
}

}  // namespace

Tensor arhmm_log_init(const ParamStore& store) {
  return normalize_log_rows(store.get("arhmm.logpi"));
}

Tensor arhmm_log_trans(const ParamStore& store) {
  return normalize_log_rows(store.get("arhmm.logA"));
}

Tensor emission_log_matrix_cond(const ParamStore& store, const ArhmmSpec& spec,
                                const Tensor& x_prev, const Tensor& x_cur) {
  if (!x_prev.same_shape(x_cur))
    throw ShapeError("emission_log_matrix_cond: " + shape_str(x_prev.shape) +
                     " vs " + shape_str(x_cur.shape));
  const std::size_t rows = x_prev.rows();
  Tensor emit({rows, spec.c});
  std::vector<double> col(rows);
  for (std::size_t r = 0; r < spec.c; ++r) {
    const MlpParams net = [&] {
      MlpParams p;
      p.slope = spec.slope;
      const MlpSpec ms = spec.emission_spec();
      for (std::size_t l = 0; l + 1 < ms.dims.size(); ++l) {
        p.w.push_back(store.get(em_prefix(r) + ".w" + std::to_string(l)));
        p.b.push_back(store.get(em_prefix(r) + ".b" + std::to_string(l)));
        p.act.push_back(l + 2 < ms.dims.size() ? Act::kLeakyRelu
                                               : Act::kIdentity);
      }
      return p;
    }();
    const Tensor out = mlp_apply_batch(net, x_prev);
    gaussian_rows_from_net(out, x_cur, spec, col.data());
    for (std::size_t i = 0; i < rows; ++i) emit.at(i, r) = col[i];
  }
  return emit;
}

Tensor emission_log_matrix(const ParamStore& store, const ArhmmSpec& spec,
                           const Tensor& x) {
  const std::size_t t_len = x.rows();
  if (t_len == 0) throw ShapeError("emission_log_matrix: empty sequence");
  Tensor emit({t_len, spec.c});

  const Tensor& mu0 = store.get("arhmm.init_mean");
  const Tensor& lv0 = store.get("arhmm.init_logvar");
  for (std::size_t r = 0; r < spec.c; ++r) {
    double acc = 0.0;
    for (std::size_t d = 0; d < spec.m; ++d) {
      const double lv = clamp_val(lv0.at(r, d), spec.logvar_lo, spec.logvar_hi);
      const double diff = x.at(0, d) - mu0.at(r, d);
      acc -= kHalfLog2Pi + 0.5 * lv + 0.5 * diff * diff * std::exp(-lv);
    }
    emit.at(0, r) = acc;
  }
  if (t_len == 1) return emit;

  Tensor x_prev({t_len - 1, spec.m}), x_cur({t_len - 1, spec.m});
  for (std::size_t t = 1; t < t_len; ++t)
    for (std::size_t d = 0; d < spec.m; ++d) {
      x_prev.at(t - 1, d) = x.at(t - 1, d);
      x_cur.at(t - 1, d) = x.at(t, d);
    }
  const Tensor cond = emission_log_matrix_cond(store, spec, x_prev, x_cur);
  for (std::size_t t = 1; t < t_len; ++t)
    for (std::size_t r = 0; r < spec.c; ++r) emit.at(t, r) = cond.at(t - 1, r);
  return emit;
}

PosteriorMarginals forward_backward(const ParamStore& store,
                                    const ArhmmSpec& spec, const Tensor& x) {
  const Tensor emit = emission_log_matrix(store, spec, x);
  const FbResult fb = forward_backward_kernel(arhmm_log_init(store),
                                              arhmm_log_trans(store), emit,
                                              /*want_xi_full=*/true);
  PosteriorMarginals out;
  out.gamma = fb.gamma;
  out.xi = fb.xi;
  out.log_likelihood = fb.log_likelihood;
  return out;
}

std::vector<std::uint32_t> viterbi(const ParamStore& store,
                                   const ArhmmSpec& spec, const Tensor& x) {
  const Tensor emit = emission_log_matrix(store, spec, x);
  return viterbi_kernel(arhmm_log_init(store), arhmm_log_trans(store), emit);
}

// --- differentiable losses -------------------------------------------------

NodeId arhmm_log_init_node(Tape& t, const Bound& b) {
  const NodeId logits = b.id("arhmm.logpi");
  return t.sub_col(logits, t.logsumexp_rows(logits));
}

NodeId arhmm_log_trans_node(Tape& t, const Bound& b) {
  const NodeId logits = b.id("arhmm.logA");
  return t.sub_col(logits, t.logsumexp_rows(logits));
}

namespace {

// Per-row Gaussian log density split out of a (mean | logvar) net output.
NodeId gaussian_rows_node(Tape& t, const ArhmmSpec& spec, NodeId net_out,
                          NodeId x) {
  const std::size_t m = spec.m;
  const NodeId mean = t.slice_cols(net_out, 0, m);
  const NodeId logvar =
      t.clamp(t.slice_cols(net_out, m, 2 * m), spec.logvar_lo, spec.logvar_hi);
  return gaussian_log_density_rows(t, x, mean, logvar);
}

}  // namespace

NodeId emission_log_matrix_node(Tape& t, const Bound& b, const ArhmmSpec& spec,
                                NodeId x_prev, NodeId x_cur) {
  std::vector<NodeId> cols;
  cols.reserve(spec.c);
  for (std::size_t r = 0; r < spec.c; ++r) {
    const NodeId out =
        mlp_forward(t, b, em_prefix(r), spec.emission_spec(), x_prev);
    cols.push_back(gaussian_rows_node(t, spec, out, x_cur));
  }
  return t.hstack(cols);
}

NodeId initial_log_row_node(Tape& t, const Bound& b, const ArhmmSpec& spec,
                            NodeId x0) {
  std::vector<NodeId> cols;
  cols.reserve(spec.c);
  const NodeId mu0 = b.id("arhmm.init_mean");
  const NodeId lv0 = b.id("arhmm.init_logvar");
  for (std::size_t r = 0; r < spec.c; ++r) {
    const NodeId mean = t.slice_rows(mu0, r, r + 1);
    const NodeId logvar =
        t.clamp(t.slice_rows(lv0, r, r + 1), spec.logvar_lo, spec.logvar_hi);
    cols.push_back(gaussian_log_density_rows(t, x0, mean, logvar));
  }
  return t.hstack(cols);
}

NodeId hmm_nll_full(Tape& t, const Bound& b, const ArhmmSpec& spec,
                    const Tensor& x) {
  const std::size_t t_len = x.rows();
  if (t_len < 2) throw ShapeError("hmm_nll_full: need at least two steps");
  Tensor x_prev({t_len - 1, spec.m}), x_cur({t_len - 1, spec.m});
  for (std::size_t i = 1; i < t_len; ++i)
    for (std::size_t d = 0; d < spec.m; ++d) {
      x_prev.at(i - 1, d) = x.at(i - 1, d);
      x_cur.at(i - 1, d) = x.at(i, d);
    }
  Tensor x0({1, spec.m});
  for (std::size_t d = 0; d < spec.m; ++d) x0.values[d] = x.at(0, d);

  const NodeId first = initial_log_row_node(t, b, spec, t.constant(x0));
  const NodeId rest = emission_log_matrix_node(
      t, b, spec, t.constant(std::move(x_prev)), t.constant(std::move(x_cur)));
  const NodeId emit = t.vstack({first, rest});
  const NodeId ll = t.hmm_log_likelihood(emit, arhmm_log_trans_node(t, b),
                                         arhmm_log_init_node(t, b));
  return t.neg(ll);
}

NodeId hmm_nll_window(Tape& t, const Bound& b, const ArhmmSpec& spec,
                      const Tensor& x_win) {
  const std::size_t rows = x_win.rows();
  if (rows < 2) throw ShapeError("hmm_nll_window: need context plus one step");
  Tensor x_prev({rows - 1, spec.m}), x_cur({rows - 1, spec.m});
  for (std::size_t i = 1; i < rows; ++i)
    for (std::size_t d = 0; d < spec.m; ++d) {
      x_prev.at(i - 1, d) = x_win.at(i - 1, d);
      x_cur.at(i - 1, d) = x_win.at(i, d);
    }
  const NodeId emit = emission_log_matrix_node(
      t, b, spec, t.constant(std::move(x_prev)), t.constant(std::move(x_cur)));
  const Tensor uniform({1, spec.c},
                       -std::log(static_cast<double>(spec.c)));
  const NodeId ll = t.hmm_log_likelihood(emit, arhmm_log_trans_node(t, b),
                                         t.constant(uniform));
  return t.neg(ll);
}

}  // namespace nctrl
