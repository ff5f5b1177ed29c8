#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "nctrl/arhmm.hpp"
#include "nctrl/error.hpp"
#include "nctrl/hmm_kernel.hpp"
#include "nctrl/nn.hpp"
#include "nctrl/rng.hpp"
#include "nctrl/tape.hpp"
#include "nctrl/tensor.hpp"

using namespace nctrl;

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

Tensor log_of(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size(), c = rows[0].size();
  Tensor t({r, c}, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t.at(i, j) = std::log(rows[i][j]);
  return t;
}

// Exhaustive reference: log-probability of every state path.
struct Enumeration {
  double log_likelihood;
  Tensor gamma;                     // [T x C]
  std::vector<std::uint32_t> best;  // most probable path
};

Enumeration enumerate_paths(const Tensor& log_init, const Tensor& log_trans,
                            const Tensor& emit) {
  const std::size_t t_len = emit.rows(), c = emit.cols();
  std::size_t total = 1;
  for (std::size_t t = 0; t < t_len; ++t) total *= c;
  std::vector<double> logp(total);
  std::vector<std::uint32_t> path(t_len);
  Enumeration out;
  out.gamma = Tensor({t_len, c}, 0.0);
  double best_lp = -1e300;
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rem = idx;
    for (std::size_t t = 0; t < t_len; ++t) {
      path[t] = static_cast<std::uint32_t>(rem % c);
      rem /= c;
    }
    double lp = log_init.values[path[0]] + emit.at(0, path[0]);
    for (std::size_t t = 1; t < t_len; ++t)
      lp += log_trans.at(path[t - 1], path[t]) + emit.at(t, path[t]);
    logp[idx] = lp;
    if (lp > best_lp) {
      best_lp = lp;
      out.best = path;
    }
  }
  out.log_likelihood = logsumexp(logp.data(), logp.size());
  for (std::size_t idx = 0; idx < total; ++idx) {
    const double w = std::exp(logp[idx] - out.log_likelihood);
    std::size_t rem = idx;
    for (std::size_t t = 0; t < t_len; ++t) {
      out.gamma.at(t, rem % c) += w;
      rem /= c;
    }
  }
  return out;
}

void zero_emission_nets(ParamStore& store, const ArhmmSpec& spec) {
  const std::size_t layers = spec.emission_spec().layer_count();
  for (std::size_t r = 0; r < spec.c; ++r)
    for (std::size_t l = 0; l < layers; ++l) {
      Tensor& w = store.get(em_prefix(r) + ".w" + std::to_string(l));
      std::fill(w.values.begin(), w.values.end(), 0.0);
      Tensor& b = store.get(em_prefix(r) + ".b" + std::to_string(l));
      std::fill(b.values.begin(), b.values.end(), 0.0);
    }
}

void copy_regime(ParamStore& store, const ArhmmSpec& spec, std::size_t from,
                 std::size_t to) {
  const std::size_t layers = spec.emission_spec().layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string s = std::to_string(l);
    store.get(em_prefix(to) + ".w" + s) = store.get(em_prefix(from) + ".w" + s);
    store.get(em_prefix(to) + ".b" + s) = store.get(em_prefix(from) + ".b" + s);
  }
}

// Plain evaluation of regime r's conditional (mean, logvar) for one row.
void emission_heads(const ParamStore& store, const ArhmmSpec& spec,
                    std::size_t r, const std::vector<double>& x_prev,
                    std::vector<double>* mean, std::vector<double>* logvar) {
  MlpParams p;
  p.slope = spec.slope;
  const MlpSpec ms = spec.emission_spec();
  for (std::size_t l = 0; l < ms.layer_count(); ++l) {
    p.w.push_back(store.get(em_prefix(r) + ".w" + std::to_string(l)));
    p.b.push_back(store.get(em_prefix(r) + ".b" + std::to_string(l)));
    p.act.push_back(l + 1 < ms.layer_count() ? Act::kLeakyRelu
                                             : Act::kIdentity);
  }
  const std::vector<double> out = mlp_apply(p, x_prev.data());
  mean->assign(out.begin(), out.begin() + spec.m);
  logvar->assign(out.begin() + spec.m, out.end());
  for (double& v : *logvar)
    v = std::min(std::max(v, spec.logvar_lo), spec.logvar_hi);
}

// Sample a sequence from the model itself.
Tensor sample_from_model(const ParamStore& store, const ArhmmSpec& spec,
                         std::size_t t_len, Rng& rng,
                         std::vector<std::uint32_t>* labels) {
  const Tensor log_pi = arhmm_log_init(store);
  const Tensor log_a = arhmm_log_trans(store);
  Tensor x({t_len, spec.m}, 0.0);
  labels->resize(t_len);

  auto draw = [&](const double* logp) {
    double u = rng.uniform(0.0, 1.0);
    for (std::size_t j = 0; j + 1 < spec.c; ++j) {
      u -= std::exp(logp[j]);
      if (u <= 0.0) return j;
    }
    return spec.c - 1;
  };
  (*labels)[0] = static_cast<std::uint32_t>(draw(log_pi.row_ptr(0)));
  const Tensor& mu0 = store.get("arhmm.init_mean");
  const Tensor& lv0 = store.get("arhmm.init_logvar");
  for (std::size_t d = 0; d < spec.m; ++d)
    x.at(0, d) = mu0.at((*labels)[0], d) +
                 std::exp(0.5 * lv0.at((*labels)[0], d)) * rng.normal();
  std::vector<double> prev(spec.m), mean, logvar;
  for (std::size_t t = 1; t < t_len; ++t) {
    (*labels)[t] =
        static_cast<std::uint32_t>(draw(log_a.row_ptr((*labels)[t - 1])));
    for (std::size_t d = 0; d < spec.m; ++d) prev[d] = x.at(t - 1, d);
    emission_heads(store, spec, (*labels)[t], prev, &mean, &logvar);
    for (std::size_t d = 0; d < spec.m; ++d)
      x.at(t, d) = mean[d] + std::exp(0.5 * logvar[d]) * rng.normal();
  }
  return x;
}

double full_nll_per_step(const ParamStore& store, const ArhmmSpec& spec,
                         const Tensor& x) {
  return -forward_backward(store, spec, x).log_likelihood /
         static_cast<double>(x.rows());
}

}  // namespace

TEST_SUITE("hmm") {

TEST_CASE("two-state two-step chain matches the four-path sum") {
  // Uniform initial distribution and transitions; per-step emission
  // likelihoods [[0.2, 0.4], [0.5, 0.1]].  Brute force over the 4 paths:
  // 0.025 + 0.005 + 0.05 + 0.01 = 0.09.
  const Tensor log_init = log_of({{0.5, 0.5}});
  const Tensor log_trans = log_of({{0.5, 0.5}, {0.5, 0.5}});
  const Tensor emit = log_of({{0.2, 0.4}, {0.5, 0.1}});
  const FbResult fb = forward_backward_kernel(log_init, log_trans, emit, false);
  CHECK(fb.log_likelihood == doctest::Approx(std::log(0.09)).epsilon(1e-12));

  // Most probable path is (1, 0) with probability 0.05.
  const std::vector<std::uint32_t> path =
      viterbi_kernel(log_init, log_trans, emit);
  CHECK(path == std::vector<std::uint32_t>({1, 0}));
}

TEST_CASE("deterministic chain forces the all-zero path") {
  const double kForbidden = -1e9;
  Tensor log_trans({2, 2}, kForbidden);
  log_trans.at(0, 0) = 0.0;
  log_trans.at(1, 1) = 0.0;
  Tensor log_init({1, 2}, kForbidden);
  log_init.at(0, 0) = 0.0;
  // Emissions favor state 1 everywhere; the chain still cannot leave 0.
  Tensor emit({6, 2}, 0.0);
  for (std::size_t t = 0; t < 6; ++t) emit.at(t, 1) = 3.0;
  const std::vector<std::uint32_t> path =
      viterbi_kernel(log_init, log_trans, emit);
  CHECK(path == std::vector<std::uint32_t>(6, 0));
}

TEST_CASE("single-state chain reduces to summed emissions") {
  Rng rng(51);
  Tensor emit({7, 1}, 0.0);
  for (double& v : emit.values) v = rng.uniform(-3.0, 0.0);
  const Tensor log_init({1, 1}, 0.0);
  const Tensor log_trans({1, 1}, 0.0);
  const FbResult fb = forward_backward_kernel(log_init, log_trans, emit, false);
  double want = 0.0;
  for (const double v : emit.values) want += v;
  CHECK(fb.log_likelihood == doctest::Approx(want).epsilon(1e-12));
  for (const double g : fb.gamma.values) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("random three-state chain matches full enumeration") {
  Rng rng(52);
  const std::size_t c = 3, t_len = 6;
  Tensor log_init({1, c}, 0.0), log_trans({c, c}, 0.0), emit({t_len, c}, 0.0);
  for (double& v : log_init.values) v = rng.uniform(-2.0, 0.0);
  for (double& v : log_trans.values) v = rng.uniform(-2.0, 0.0);
  for (double& v : emit.values) v = rng.uniform(-4.0, 0.0);
  // Note: the kernel treats entries as free log-potentials, so the oracle
  // enumerates with exactly the same unnormalized tables.
  const Enumeration ref = enumerate_paths(log_init, log_trans, emit);
  const FbResult fb = forward_backward_kernel(log_init, log_trans, emit, true);
  CHECK(fb.log_likelihood ==
        doctest::Approx(ref.log_likelihood).epsilon(1e-8));
  for (std::size_t i = 0; i < ref.gamma.values.size(); ++i)
    CHECK(fb.gamma.values[i] ==
          doctest::Approx(ref.gamma.values[i]).epsilon(1e-8));
  CHECK(viterbi_kernel(log_init, log_trans, emit) == ref.best);
}

TEST_CASE("posterior marginals are consistent") {
  Rng rng(53);
  const std::size_t c = 4, t_len = 30;
  Tensor log_init({1, c}, 0.0), log_trans({c, c}, 0.0), emit({t_len, c}, 0.0);
  for (double& v : log_init.values) v = rng.uniform(-2.0, 0.0);
  for (double& v : log_trans.values) v = rng.uniform(-2.0, 0.0);
  for (double& v : emit.values) v = rng.uniform(-4.0, 0.0);
  const FbResult fb = forward_backward_kernel(log_init, log_trans, emit, true);

  for (std::size_t t = 0; t < t_len; ++t) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) row += fb.gamma.at(t, j);
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
  }
  // Pairwise posteriors marginalize to the state posteriors on both sides,
  // and their sum over time reproduces xi_sum.
  Tensor xi_acc({c, c}, 0.0);
  for (std::size_t t = 0; t + 1 < t_len; ++t)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t k = 0; k < c; ++k) {
        xi_acc.at(j, k) += fb.xi.values[(t * c + j) * c + k];
      }
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t k = 0; k < c; ++k)
      CHECK(xi_acc.at(j, k) ==
            doctest::Approx(fb.xi_sum.at(j, k)).epsilon(1e-9));
  for (std::size_t t = 0; t + 1 < t_len; ++t)
    for (std::size_t j = 0; j < c; ++j) {
      double left = 0.0, right = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        left += fb.xi.values[(t * c + j) * c + k];
        right += fb.xi.values[(t * c + k) * c + j];
      }
      CHECK(left == doctest::Approx(fb.gamma.at(t, j)).epsilon(1e-9));
      CHECK(right == doctest::Approx(fb.gamma.at(t + 1, j)).epsilon(1e-9));
    }
}

TEST_CASE("zero emission networks give the standard-normal density") {
  ArhmmSpec spec;
  spec.m = 3;
  spec.c = 2;
  spec.hidden = 8;
  ParamStore store;
  Rng rng(54);
  init_arhmm(store, spec, rng);
  zero_emission_nets(store, spec);

  Tensor x_prev({4, spec.m}, 0.0);
  Rng pr(55);
  for (double& v : x_prev.values) v = pr.normal();
  const Tensor x_cur({4, spec.m}, 0.0);
  const Tensor emit = emission_log_matrix_cond(store, spec, x_prev, x_cur);
  const double want = -static_cast<double>(spec.m) * kHalfLog2Pi;
  for (const double v : emit.values)
    CHECK(v == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("identical regime networks emit identical columns") {
  ArhmmSpec spec;
  spec.m = 4;
  spec.c = 3;
  spec.hidden = 8;
  ParamStore store;
  Rng rng(56);
  init_arhmm(store, spec, rng);
  copy_regime(store, spec, 0, 2);

  Tensor x_prev({10, spec.m}, 0.0), x_cur({10, spec.m}, 0.0);
  Rng pr(57);
  for (double& v : x_prev.values) v = pr.normal();
  for (double& v : x_cur.values) v = pr.normal();
  const Tensor emit = emission_log_matrix_cond(store, spec, x_prev, x_cur);
  for (std::size_t i = 0; i < emit.rows(); ++i) {
    CHECK(emit.at(i, 0) == emit.at(i, 2));
    CHECK(emit.at(i, 0) != emit.at(i, 1));  // the un-copied one differs
  }
  CHECK_THROWS_AS(
      (void)emission_log_matrix_cond(store, spec, x_prev,
                                     Tensor({9, spec.m}, 0.0)),
      ShapeError);
}

TEST_CASE("emission table equals the autodiff density composition") {
  ArhmmSpec spec;
  spec.m = 3;
  spec.c = 2;
  spec.hidden = 6;
  ParamStore store;
  Rng rng(58);
  init_arhmm(store, spec, rng);

  const std::size_t rows = 5;
  Tensor x_prev({rows, spec.m}, 0.0), x_cur({rows, spec.m}, 0.0);
  Rng pr(59);
  for (double& v : x_prev.values) v = pr.normal();
  for (double& v : x_cur.values) v = pr.normal();
  const Tensor emit = emission_log_matrix_cond(store, spec, x_prev, x_cur);

  for (std::size_t r = 0; r < spec.c; ++r) {
    Tape tp;
    const Bound b = bind_params(tp, store, false, {em_prefix(r)});
    const NodeId out = mlp_forward(tp, b, em_prefix(r), spec.emission_spec(),
                                   tp.constant(x_prev));
    const NodeId mean = tp.slice_cols(out, 0, spec.m);
    const NodeId logvar = tp.clamp(tp.slice_cols(out, spec.m, 2 * spec.m),
                                   spec.logvar_lo, spec.logvar_hi);
    const NodeId dens =
        gaussian_log_density_rows(tp, tp.constant(x_cur), mean, logvar);
    const Tensor& v = tp.val(dens);
    for (std::size_t i = 0; i < rows; ++i)
      CHECK(emit.at(i, r) == doctest::Approx(v.at(i, 0)).epsilon(1e-12));
  }
}

TEST_CASE("full-sequence loss node agrees with plain inference") {
  ArhmmSpec spec;
  spec.m = 2;
  spec.c = 3;
  spec.hidden = 5;
  ParamStore store;
  Rng rng(60);
  init_arhmm(store, spec, rng);
  Tensor x({12, spec.m}, 0.0);
  Rng pr(61);
  for (double& v : x.values) v = pr.normal();

  Tape tp;
  const Bound b = bind_params(tp, store, true);
  const NodeId nll = hmm_nll_full(tp, b, spec, x);
  const double plain = forward_backward(store, spec, x).log_likelihood;
  CHECK(tp.val(nll).values[0] == doctest::Approx(-plain).epsilon(1e-9));
}

TEST_CASE("full-sequence loss gradients match finite differences") {
  ArhmmSpec spec;
  spec.m = 2;
  spec.c = 2;
  spec.hidden = 4;
  ParamStore store;
  Rng rng(62);
  init_arhmm(store, spec, rng);
  Tensor x({4, spec.m}, 0.0);
  Rng pr(63);
  for (double& v : x.values) v = pr.normal();

  const auto eval = [&]() {
    Tape tp;
    const Bound b = bind_params(tp, store, true);
    return tp.val(hmm_nll_full(tp, b, spec, x)).values[0];
  };

  Tape tp;
  const Bound b = bind_params(tp, store, true);
  const std::vector<Tensor> grads = tp.backward(hmm_nll_full(tp, b, spec, x));

  const double step = 1e-5;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const NodeId id = b.ids.at(store.name_at(i));
    const Tensor& g = grads[id];
    Tensor& p = store.at(i);
    for (std::size_t e = 0; e < p.values.size(); ++e) {
      const double saved = p.values[e];
      p.values[e] = saved + step;
      const double up = eval();
      p.values[e] = saved - step;
      const double down = eval();
      p.values[e] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double an = g.empty() ? 0.0 : g.values[e];
      if (std::fabs(an) > 1e-6) {
        CHECK(std::fabs(fd - an) / std::fabs(an) <= 1e-4);
      } else {
        CHECK(std::fabs(fd - an) <= 1e-6);
      }
    }
  }
}

TEST_CASE("relabeling the regimes leaves the likelihood unchanged") {
  ArhmmSpec spec;
  spec.m = 2;
  spec.c = 3;
  spec.hidden = 5;
  ParamStore store;
  Rng rng(64);
  init_arhmm(store, spec, rng);
  Tensor x({20, spec.m}, 0.0);
  Rng pr(65);
  for (double& v : x.values) v = pr.normal();
  const double before = forward_backward(store, spec, x).log_likelihood;

  // Apply the cycle 0 -> 1 -> 2 -> 0 to every regime-indexed parameter.
  const std::vector<std::size_t> sigma = {1, 2, 0};  // old r -> new label
  ParamStore permuted;
  Rng dummy(1);
  init_arhmm(permuted, spec, dummy);
  const std::size_t layers = spec.emission_spec().layer_count();
  for (std::size_t r = 0; r < spec.c; ++r)
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string s = std::to_string(l);
      permuted.get(em_prefix(sigma[r]) + ".w" + s) =
          store.get(em_prefix(r) + ".w" + s);
      permuted.get(em_prefix(sigma[r]) + ".b" + s) =
          store.get(em_prefix(r) + ".b" + s);
    }
  for (const char* name : {"arhmm.logA", "arhmm.logpi", "arhmm.init_mean",
                           "arhmm.init_logvar"}) {
    const Tensor& src = store.get(name);
    Tensor& dst = permuted.get(name);
    if (src.rows() == 1) {
      for (std::size_t j = 0; j < spec.c; ++j)
        dst.at(0, sigma[j]) = src.at(0, j);
    } else if (src.cols() == spec.c) {  // logA: permute rows and columns
      for (std::size_t i = 0; i < spec.c; ++i)
        for (std::size_t j = 0; j < spec.c; ++j)
          dst.at(sigma[i], sigma[j]) = src.at(i, j);
    } else {  // per-regime rows
      for (std::size_t i = 0; i < spec.c; ++i)
        for (std::size_t j = 0; j < src.cols(); ++j)
          dst.at(sigma[i], j) = src.at(i, j);
    }
  }
  const double after = forward_backward(permuted, spec, x).log_likelihood;
  CHECK(after == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("windowed loss equals a uniform-restart chain on the window") {
  ArhmmSpec spec;
  spec.m = 2;
  spec.c = 3;
  spec.hidden = 5;
  ParamStore store;
  Rng rng(66);
  init_arhmm(store, spec, rng);
  const std::size_t w = 6;
  Tensor x_win({w + 1, spec.m}, 0.0);
  Rng pr(67);
  for (double& v : x_win.values) v = pr.normal();

  Tape tp;
  const Bound b = bind_params(tp, store, true);
  const NodeId nll = hmm_nll_window(tp, b, spec, x_win);

  Tensor xp({w, spec.m}, 0.0), xc({w, spec.m}, 0.0);
  for (std::size_t r = 0; r < w; ++r)
    for (std::size_t j = 0; j < spec.m; ++j) {
      xp.at(r, j) = x_win.at(r, j);
      xc.at(r, j) = x_win.at(r + 1, j);
    }
  const Tensor emit = emission_log_matrix_cond(store, spec, xp, xc);
  const Tensor log_init({1, spec.c},
                        -std::log(static_cast<double>(spec.c)));
  const FbResult fb =
      forward_backward_kernel(log_init, arhmm_log_trans(store), emit, false);
  CHECK(tp.val(nll).values[0] ==
        doctest::Approx(-fb.log_likelihood).epsilon(1e-9));
}

TEST_CASE("true parameters beat a single-regime fit on their own data") {
  ArhmmSpec truth;
  truth.m = 2;
  truth.c = 2;
  truth.hidden = 8;
  truth.init_mean_spread = 3.0;  // well-separated regime centers
  ParamStore store;
  Rng rng(68);
  init_arhmm(store, truth, rng);

  std::vector<std::uint32_t> labels;
  Rng sample_rng(69);
  const Tensor x = sample_from_model(store, truth, 1500, sample_rng, &labels);
  const double nll_true = full_nll_per_step(store, truth, x);

  // Single-regime model of the same family, fitted by plain gradient steps.
  ArhmmSpec single = truth;
  single.c = 1;
  ParamStore fit;
  Rng fit_rng(70);
  init_arhmm(fit, single, fit_rng);
  const std::size_t t_len = x.rows();
  Tensor xp({t_len - 1, single.m}, 0.0), xc({t_len - 1, single.m}, 0.0);
  for (std::size_t t = 0; t + 1 < t_len; ++t)
    for (std::size_t j = 0; j < single.m; ++j) {
      xp.at(t, j) = x.at(t, j);
      xc.at(t, j) = x.at(t + 1, j);
    }
  const double lr = 0.05;
  for (int step = 0; step < 200; ++step) {
    Tape tp;
    const Bound b = bind_params(tp, fit, true, {"arhmm.em"});
    const NodeId emit = emission_log_matrix_node(tp, b, single,
                                                 tp.constant(xp),
                                                 tp.constant(xc));
    const NodeId loss = tp.mean(tp.neg(emit));
    const std::vector<Tensor> g = tp.backward(loss);
    for (std::size_t i = 0; i < fit.size(); ++i) {
      const auto it = b.ids.find(fit.name_at(i));
      if (it == b.ids.end() || g[it->second].empty()) continue;
      Tensor& p = fit.at(i);
      for (std::size_t e = 0; e < p.values.size(); ++e)
        p.values[e] -= lr * g[it->second].values[e];
    }
  }
  const double nll_single = full_nll_per_step(fit, single, x);
  CHECK(nll_true <= nll_single);
}

}  // TEST_SUITE
