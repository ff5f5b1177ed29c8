#include "nctrl/priorflow.hpp"

#include <cmath>

#include "nctrl/error.hpp"

namespace nctrl {

namespace {
std::string comp_prefix(std::size_t i) { return "flow.f" + std::to_string(i); }
}  // namespace

void init_flow(ParamStore& store, const FlowSpec& spec, Rng& rng) {
  Tensor emb({spec.c, spec.d_theta});
  for (double& v : emb.values) v = 0.2 * rng.normal();
  store.add("flow.emb", std::move(emb));
  store.add("flow.logscale", Tensor({spec.c, spec.n}, 0.0));
  for (std::size_t i = 0; i < spec.n; ++i) {
    init_mlp(store, comp_prefix(i), spec.comp_spec(), rng);
    store.add(comp_prefix(i) + ".skip", Tensor::scalar(1.0));
  }
}

FlowNodes flow_eval(Tape& t, const Bound& b, const FlowSpec& spec, NodeId z_t,
                    NodeId z_hist, const std::vector<std::uint32_t>& c_idx,
                    const Tensor* soft_gamma) {
  const Tensor& zt_val = t.val(z_t);
  const std::size_t rows = zt_val.rows();
  if (zt_val.cols() != spec.n)
    throw ShapeError("flow_eval: z_t " + shape_str(zt_val.shape));
  if (t.val(z_hist).rows() != rows || t.val(z_hist).cols() != spec.n * spec.lag)
    throw ShapeError("flow_eval: z_hist " + shape_str(t.val(z_hist).shape));
  if (c_idx.size() != rows && soft_gamma == nullptr)
    throw ShapeError("flow_eval: c_idx size " + std::to_string(c_idx.size()) +
                     " for " + std::to_string(rows) + " rows");
  for (std::uint32_t c : c_idx)
    if (c >= spec.c)
      throw ValueError("flow_eval: regime label out of range: " +
                       std::to_string(c));

  // Regime conditioning: embedding rows and noise log-variances.
  NodeId theta, logvar_noise;
  if (soft_gamma != nullptr) {
    if (soft_gamma->rows() != rows || soft_gamma->cols() != spec.c)
      throw ShapeError("flow_eval: soft weights " + shape_str(soft_gamma->shape));
    const NodeId gamma = t.constant(*soft_gamma);
    theta = t.matmul(gamma, b.id("flow.emb"));
    logvar_noise = t.matmul(gamma, t.scale_add(b.id("flow.logscale"), 2.0, 0.0));
  } else {
    std::vector<std::size_t> ridx(c_idx.begin(), c_idx.end());
    theta = t.gather_rows(b.id("flow.emb"), ridx);
    logvar_noise =
        t.gather_rows(t.scale_add(b.id("flow.logscale"), 2.0, 0.0), ridx);
  }
  logvar_noise = t.clamp(logvar_noise, spec.logvar_lo, spec.logvar_hi);

  const NodeId ones = t.constant(Tensor({rows, 1}, 1.0));
  std::vector<NodeId> eps_cols, diag_cols, logdiag_cols;
  eps_cols.reserve(spec.n);
  diag_cols.reserve(spec.n);
  logdiag_cols.reserve(spec.n);

  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::string p = comp_prefix(i);
    const NodeId w0 = b.id(p + ".w0"), b0 = b.id(p + ".b0");
    const NodeId w1 = b.id(p + ".w1"), b1 = b.id(p + ".b1");
    const NodeId w2 = b.id(p + ".w2"), b2 = b.id(p + ".b2");
    const NodeId skip = b.id(p + ".skip");

    const NodeId zcol = t.slice_cols(z_t, i, i + 1);
    const NodeId input = t.hstack({zcol, z_hist, theta});

    // Primal pass, keeping pre-activations for the tangent pass.
    const NodeId a1 = t.add_row(t.matmul(input, w0), b0);
    const NodeId h1 = t.leaky_relu(a1, spec.slope);
    const NodeId a2 = t.add_row(t.matmul(h1, w1), b1);
    const NodeId h2 = t.leaky_relu(a2, spec.slope);
    const NodeId out = t.add_row(t.matmul(h2, w2), b2);

    // Forward tangent in the direction of this component's own coordinate
    // (the first input column): d out / d z_t[i].
    const NodeId s1 = t.matmul(ones, t.slice_rows(w0, 0, 1));
    const NodeId t1 = t.mul(t.leaky_relu_grad(a1, spec.slope), s1);
    const NodeId s2 = t.matmul(t1, w1);
    const NodeId t2 = t.mul(t.leaky_relu_grad(a2, spec.slope), s2);
    const NodeId s3 = t.matmul(t2, w2);  // [R x 1]

    const NodeId eps_i = t.add(out, t.mul_scalar_node(zcol, skip));
    const NodeId diag_i = t.add(s3, t.mul_scalar_node(ones, skip));

    for (double v : t.val(diag_i).values)
      if (std::abs(v) < spec.min_diag)
        throw CollapsedFlowError(
            "flow component " + std::to_string(i) +
            " has a vanishing diagonal derivative (|" + std::to_string(v) +
            "| < " + std::to_string(spec.min_diag) + ")");

    eps_cols.push_back(eps_i);
    diag_cols.push_back(diag_i);
    logdiag_cols.push_back(t.log(t.abs(diag_i)));
  }

  FlowNodes nodes;
  nodes.eps = t.hstack(eps_cols);
  nodes.diag = t.hstack(diag_cols);
  nodes.log_diag = t.hstack(logdiag_cols);
  const NodeId zero_mean = t.constant(Tensor({rows, spec.n}, 0.0));
  nodes.log_prob_rows =
      t.add(gaussian_log_density_rows(t, nodes.eps, zero_mean, logvar_noise),
            t.row_sum(nodes.log_diag));
  return nodes;
}

namespace {

FlowNodes one_row_eval(Tape& t, Bound& bound, const ParamStore& store,
                       const FlowSpec& spec, const std::vector<double>& z_t,
                       const std::vector<double>& z_hist, std::uint32_t c) {
  if (z_t.size() != spec.n || z_hist.size() != spec.n * spec.lag)
    throw ShapeError("prior evaluation: bad input sizes");
  bound = bind_params(t, store, /*trainable=*/false);
  const NodeId zt = t.constant(Tensor::row(z_t));
  const NodeId zh = t.constant(Tensor::row(z_hist));
  return flow_eval(t, bound, spec, zt, zh, {c});
}

}  // namespace

double prior_log_prob(const ParamStore& store, const FlowSpec& spec,
                      const std::vector<double>& z_t,
                      const std::vector<double>& z_hist, std::uint32_t c) {
  Tape t;
  Bound bound;
  const FlowNodes nodes = one_row_eval(t, bound, store, spec, z_t, z_hist, c);
  return t.val(nodes.log_prob_rows).values[0];
}

double diagonal_derivative(const ParamStore& store, const FlowSpec& spec,
                           const std::vector<double>& z_t,
                           const std::vector<double>& z_hist, std::uint32_t c,
                           std::size_t i) {
  if (i >= spec.n) throw ValueError("diagonal_derivative: bad component index");
  Tape t;
  Bound bound;
  const FlowNodes nodes = one_row_eval(t, bound, store, spec, z_t, z_hist, c);
  return t.val(nodes.diag).values[i];
}

std::vector<double> flow_eps_plain(const ParamStore& store, const FlowSpec& spec,
                                   const std::vector<double>& z_t,
                                   const std::vector<double>& z_hist,
                                   std::uint32_t c) {
  if (z_t.size() != spec.n || z_hist.size() != spec.n * spec.lag ||
      c >= spec.c)
    throw ValueError("flow_eps_plain: bad inputs");
  const Tensor& emb = store.get("flow.emb");
  std::vector<double> eps(spec.n);
  std::vector<double> input(spec.in_dim());
  for (std::size_t i = 0; i < spec.n; ++i) {
    input[0] = z_t[i];
    for (std::size_t j = 0; j < z_hist.size(); ++j) input[1 + j] = z_hist[j];
    for (std::size_t j = 0; j < spec.d_theta; ++j)
      input[1 + z_hist.size() + j] = emb.at(c, j);
    MlpParams p;
    p.slope = spec.slope;
    const std::string pre = comp_prefix(i);
    for (int l = 0; l < 3; ++l) {
      p.w.push_back(store.get(pre + ".w" + std::to_string(l)));
      p.b.push_back(store.get(pre + ".b" + std::to_string(l)));
      p.act.push_back(l < 2 ? Act::kLeakyRelu : Act::kIdentity);
    }
    const std::vector<double> out = mlp_apply(p, input.data());
    eps[i] = out[0] + store.get(pre + ".skip").values[0] * z_t[i];
  }
  return eps;
}

}  // namespace nctrl
