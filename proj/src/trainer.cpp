#include "nctrl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "nctrl/error.hpp"
#include "nctrl/metrics.hpp"
#include "nctrl/rng.hpp"

namespace nctrl {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.window == 0)
    throw ValueError("train config: window must be positive");
  if (cfg.batch == 0) throw ValueError("train config: batch must be positive");
  if (cfg.lr <= 0.0 || cfg.stage1_lr <= 0.0)
    throw ValueError("train config: learning rate must be positive");
  if (cfg.stage1_inner_steps == 0)
    throw ValueError("train config: stage-1 inner steps must be positive");
  if (cfg.stage1_batch_rows == 0)
    throw ValueError("train config: stage-1 batch rows must be positive");
  if (cfg.stage1_temp < 1.0)
    throw ValueError("train config: stage-1 temperature must be >= 1");
  if (cfg.beta < 0.0 || cfg.lambda_h < 0.0)
    throw ValueError("train config: loss weights must be non-negative");
  if (cfg.redecode_period == 0)
    throw ValueError("train config: redecode period must be positive");
  if (cfg.lr_decay <= 0.0 || cfg.lr_decay > 1.0)
    throw ValueError("train config: lr decay must be in (0, 1]");
  if (cfg.min_lr <= 0.0)
    throw ValueError("train config: minimum learning rate must be positive");
  if (cfg.divergence_threshold <= 0.0)
    throw ValueError("train config: divergence threshold must be positive");
  if (cfg.chunk_rows == 0)
    throw ValueError("train config: chunk length must be positive");
  if (cfg.snapshot_every == 0)
    throw ValueError("train config: snapshot period must be positive");
  if (cfg.adam_beta1 < 0.0 || cfg.adam_beta1 >= 1.0 || cfg.adam_beta2 < 0.0 ||
      cfg.adam_beta2 >= 1.0 || cfg.adam_eps <= 0.0)
    throw ValueError("train config: bad optimizer constants");
}

ModelSpecs make_model_specs(std::size_t m, std::size_t n, std::size_t c,
                            std::size_t lag, const TrainConfig& cfg) {
  if (m == 0 || n == 0 || c == 0 || lag == 0)
    throw ValueError("model specs: dimensions must be positive");
  ModelSpecs s;
  s.vae.m = m;
  s.vae.n = n;
  s.vae.hidden = cfg.vae_hidden;
  s.vae.slope = cfg.slope;
  s.arhmm.m = m;
  s.arhmm.c = c;
  s.arhmm.hidden = cfg.arhmm_hidden;
  s.arhmm.slope = cfg.slope;
  s.flow.n = n;
  s.flow.c = c;
  s.flow.lag = lag;
  s.flow.d_theta = cfg.d_theta;
  s.flow.hidden = cfg.flow_hidden;
  s.flow.slope = cfg.slope;
  return s;
}

void write_model_meta(ParamStore& store, const ModelSpecs& specs) {
  store.add("model.meta",
            Tensor::row({1.0, static_cast<double>(specs.vae.m),
                         static_cast<double>(specs.vae.n),
                         static_cast<double>(specs.arhmm.c),
                         static_cast<double>(specs.flow.lag),
                         static_cast<double>(specs.vae.hidden),
                         static_cast<double>(specs.arhmm.hidden),
                         static_cast<double>(specs.flow.hidden),
                         static_cast<double>(specs.flow.d_theta),
                         specs.vae.slope}));
}

ModelSpecs model_specs_from_store(const ParamStore& store) {
  if (!store.has("model.meta"))
    throw FormatError("model checkpoint is missing its meta record");
  const Tensor& meta = store.get("model.meta");
  if (meta.numel() != 10 || meta.values[0] != 1.0)
    throw FormatError("unsupported model meta record");
  TrainConfig cfg;
  cfg.vae_hidden = static_cast<std::size_t>(meta.values[5]);
  cfg.arhmm_hidden = static_cast<std::size_t>(meta.values[6]);
  cfg.flow_hidden = static_cast<std::size_t>(meta.values[7]);
  cfg.d_theta = static_cast<std::size_t>(meta.values[8]);
  cfg.slope = meta.values[9];
  return make_model_specs(static_cast<std::size_t>(meta.values[1]),
                          static_cast<std::size_t>(meta.values[2]),
                          static_cast<std::size_t>(meta.values[3]),
                          static_cast<std::size_t>(meta.values[4]), cfg);
}

void fit_standardizer(const Tensor& x, bool enabled, Tensor* mean,
                      Tensor* scale) {
  const std::size_t t_len = x.rows();
  const std::size_t m = x.cols();
  if (t_len == 0) throw ValueError("standardizer: empty input");
  *mean = Tensor({1, m}, 0.0);
  *scale = Tensor({1, m}, 1.0);
  if (!enabled) return;
  for (std::size_t j = 0; j < m; ++j) {
    double mu = 0.0;
    for (std::size_t r = 0; r < t_len; ++r) mu += x.at(r, j);
    mu /= static_cast<double>(t_len);
    double var = 0.0;
    for (std::size_t r = 0; r < t_len; ++r) {
      const double d = x.at(r, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(t_len);
    mean->at(0, j) = mu;
    scale->at(0, j) = std::max(std::sqrt(var), 1e-8);
  }
}

Tensor standardize(const Tensor& x, const Tensor& mean, const Tensor& scale) {
  if (mean.cols() != x.cols() || scale.cols() != x.cols())
    throw ShapeError("standardizer: column counts differ");
  Tensor y = x;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t j = 0; j < y.cols(); ++j)
      y.at(r, j) = (y.at(r, j) - mean.at(0, j)) / scale.at(0, j);
  return y;
}

WindowGraph window_graph(Tape& t, const Bound& b, const ModelSpecs& specs,
                         const Tensor& x_rows,
                         const std::vector<std::uint32_t>& c_core,
                         const Tensor& u, const Tensor* soft_gamma) {
  const std::size_t lag = specs.flow.lag;
  const std::size_t w = c_core.size();
  if (w == 0) throw ValueError("window: empty core");
  if (x_rows.rows() != w + lag || x_rows.cols() != specs.vae.m)
    throw ShapeError("window: expected [" + std::to_string(w + lag) + " x " +
                     std::to_string(specs.vae.m) + "] rows, got " +
                     shape_str(x_rows.shape));
  if (u.rows() != w + lag || u.cols() != specs.vae.n)
    throw ShapeError("window: noise shape " + shape_str(u.shape));

  const NodeId x = t.constant(x_rows);
  const EncodeNodes enc = encode_node(t, b, specs.vae, x);
  const NodeId z_s = reparameterize_node(t, enc.mean, enc.log_var, u);
  const NodeId x_hat = decode_node(t, b, specs.vae, z_s);

  WindowGraph g;
  g.recon_sq_sum = t.sum(t.square(t.sub(x_hat, x)));

  const NodeId z_core = t.slice_rows(z_s, lag, w + lag);
  std::vector<NodeId> hist_parts;
  hist_parts.reserve(lag);
  for (std::size_t l = 0; l < lag; ++l)
    hist_parts.push_back(t.slice_rows(z_s, l, w + l));
  const NodeId z_hist =
      hist_parts.size() == 1 ? hist_parts[0] : t.hstack(hist_parts);
  const FlowNodes flow =
      flow_eval(t, b, specs.flow, z_core, z_hist, c_core, soft_gamma);

  const NodeId mean_core = t.slice_rows(enc.mean, lag, w + lag);
  const NodeId logvar_core = t.slice_rows(enc.log_var, lag, w + lag);
  const NodeId q_rows =
      posterior_log_density_rows(t, z_core, mean_core, logvar_core);
  g.kld_sum = t.sum(t.sub(q_rows, flow.log_prob_rows));

  // Chain loss over the core steps; the last history row is the context.
  Tensor x_hmm({w + 1, specs.arhmm.m}, 0.0);
  for (std::size_t r = 0; r < w + 1; ++r)
    for (std::size_t j = 0; j < specs.arhmm.m; ++j)
      x_hmm.at(r, j) = x_rows.at(lag - 1 + r, j);
  g.hmm_nll = hmm_nll_window(t, b, specs.arhmm, x_hmm);
  return g;
}

namespace {

constexpr const char* kMeanName = "preproc.mean";
constexpr const char* kScaleName = "preproc.scale";

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

std::vector<char> prefix_mask(const ParamStore& store,
                              const std::vector<std::string>& prefixes) {
  std::vector<char> mask(store.size(), 0);
  for (std::size_t i = 0; i < store.size(); ++i)
    for (const std::string& p : prefixes)
      if (starts_with(store.name_at(i), p)) {
        mask[i] = 1;
        break;
      }
  return mask;
}

std::vector<Tensor> zeros_like(const ParamStore& store) {
  std::vector<Tensor> z;
  z.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i)
    z.emplace_back(store.at(i).shape, 0.0);
  return z;
}

void accumulate(const ParamStore& store, const Bound& bound,
                const std::vector<Tensor>& tape_grads, double scale,
                std::vector<Tensor>* acc) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto it = bound.ids.find(store.name_at(i));
    if (it == bound.ids.end()) continue;
    const Tensor& g = tape_grads[it->second];
    if (g.empty()) continue;
    Tensor& a = (*acc)[i];
    for (std::size_t j = 0; j < a.values.size(); ++j)
      a.values[j] += scale * g.values[j];
  }
}

struct Adam {
  double beta1, beta2, eps;
  std::vector<Tensor> m, v;
  std::vector<std::size_t> steps;

  Adam(const ParamStore& store, const TrainConfig& cfg)
      : beta1(cfg.adam_beta1), beta2(cfg.adam_beta2), eps(cfg.adam_eps) {
    m.reserve(store.size());
    v.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      m.emplace_back(store.at(i).shape, 0.0);
      v.emplace_back(store.at(i).shape, 0.0);
    }
    steps.assign(store.size(), 0);
  }

  void apply(ParamStore& store, const std::vector<Tensor>& grads,
             const std::vector<char>& active, double lr) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (!active[i] || grads[i].empty()) continue;
      ++steps[i];
      const double c1 =
          1.0 - std::pow(beta1, static_cast<double>(steps[i]));
      const double c2 =
          1.0 - std::pow(beta2, static_cast<double>(steps[i]));
      Tensor& p = store.at(i);
      for (std::size_t j = 0; j < p.values.size(); ++j) {
        const double g = grads[i].values[j];
        double& mi = m[i].values[j];
        double& vi = v[i].values[j];
        mi = beta1 * mi + (1.0 - beta1) * g;
        vi = beta2 * vi + (1.0 - beta2) * g * g;
        p.values[j] -= lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
      }
    }
  }
};

struct Plateau {
  double best = std::numeric_limits<double>::infinity();
  std::size_t stall = 0;

  void update(double loss, const TrainConfig& cfg, double* lr) {
    if (loss < best - 1e-4) {
      best = loss;
      stall = 0;
      return;
    }
    if (++stall >= cfg.plateau_patience) {
      *lr = std::max(*lr * cfg.lr_decay, cfg.min_lr);
      stall = 0;
    }
  }
};

// Exact maximizer of the expected complete-data log-likelihood for the
// transition matrix and initial distribution: row-normalized expected
// counts with a small additive floor so unvisited transitions stay finite.
void chain_closed_form_update(ParamStore& store, const Tensor& xi_sum,
                              const Tensor& gamma0) {
  const std::size_t c = gamma0.cols();
  const double floor_count = 1e-6;
  Tensor& log_a = store.get("arhmm.logA");
  for (std::size_t j = 0; j < c; ++j) {
    double row = 0.0;
    for (std::size_t k = 0; k < c; ++k) row += xi_sum.at(j, k) + floor_count;
    for (std::size_t k = 0; k < c; ++k)
      log_a.at(j, k) = std::log((xi_sum.at(j, k) + floor_count) / row);
  }
  Tensor& log_pi = store.get("arhmm.logpi");
  double total = 0.0;
  for (std::size_t j = 0; j < c; ++j) total += gamma0.at(0, j) + floor_count;
  for (std::size_t j = 0; j < c; ++j)
    log_pi.at(0, j) = std::log((gamma0.at(0, j) + floor_count) / total);
}

void posterior_counts(const PosteriorMarginals& post, std::size_t t_len,
                      std::size_t c, Tensor* xi_sum, Tensor* gamma0) {
  *xi_sum = Tensor({c, c}, 0.0);
  if (t_len >= 2) {
    for (std::size_t s = 0; s + 1 < t_len; ++s)
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t k = 0; k < c; ++k)
          xi_sum->at(j, k) += post.xi.values[(s * c + j) * c + k];
  }
  *gamma0 = Tensor({1, c}, 0.0);
  for (std::size_t j = 0; j < c; ++j) gamma0->at(0, j) = post.gamma.at(0, j);
}

// One full-sequence pass then a closed-form refresh of the transition and
// initial-state parameters given the current emission networks.
void chain_refresh(ParamStore& store, const ArhmmSpec& spec, const Tensor& x) {
  if (x.rows() < 2) return;
  const PosteriorMarginals post = forward_backward(store, spec, x);
  Tensor xi_sum, gamma0;
  posterior_counts(post, x.rows(), spec.c, &xi_sum, &gamma0);
  chain_closed_form_update(store, xi_sum, gamma0);
}

enum class Stage1Phase { kPretrain, kSoft, kHard };

// Clone regime 0's trained emission network to every regime and give each
// clone's predicted-mean output channels a fresh random offset; likewise for
// the initial-emission parameters. Run once at the end of the pretrain phase.
void split_shared_backbone(ParamStore& store, const ArhmmSpec& spec,
                           Rng& rng) {
  const std::size_t layers = spec.emission_spec().layer_count();
  for (std::size_t r = 1; r < spec.c; ++r)
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string suffix = std::to_string(l);
      store.get(em_prefix(r) + ".w" + suffix) =
          store.get(em_prefix(0) + ".w" + suffix);
      store.get(em_prefix(r) + ".b" + suffix) =
          store.get(em_prefix(0) + ".b" + suffix);
    }
  Tensor& init_mean = store.get("arhmm.init_mean");
  Tensor& init_logvar = store.get("arhmm.init_logvar");
  for (std::size_t r = 1; r < spec.c; ++r)
    for (std::size_t j = 0; j < spec.m; ++j) {
      init_mean.at(r, j) = init_mean.at(0, j);
      init_logvar.at(r, j) = init_logvar.at(0, j);
    }
  const std::string last = std::to_string(layers - 1);
  for (std::size_t r = 0; r < spec.c; ++r) {
    Tensor& bias = store.get(em_prefix(r) + ".b" + last);
    for (std::size_t j = 0; j < spec.m; ++j)
      bias.at(0, j) += spec.init_mean_spread * rng.normal();
  }
}

double stage1_epoch(ParamStore& store, const ModelSpecs& specs,
                    const Tensor& x, Adam& adam,
                    const std::vector<char>& mask, double lr,
                    const TrainConfig& cfg, std::size_t epoch_index,
                    Stage1Phase phase, double temperature, bool chain_update,
                    Rng& rng_rows, std::vector<Tensor>* grads_scratch) {
  const ArhmmSpec& spec = specs.arhmm;
  const std::size_t t_len = x.rows();
  const std::size_t c = spec.c;

  // E-step: exact posteriors over the full sequence; the reported loss is
  // the full-length per-step negative log-likelihood before this epoch's
  // parameter updates.
  const PosteriorMarginals post = forward_backward(store, spec, x);
  const double nll = -post.log_likelihood / static_cast<double>(t_len);
  if (!std::isfinite(nll) || nll > cfg.divergence_threshold)
    throw DivergenceError("chain loss diverged at stage-1 epoch " +
                          std::to_string(epoch_index) +
                          " (per-step value " + std::to_string(nll) + ")");

  if (chain_update) {
    Tensor xi_sum, gamma0;
    posterior_counts(post, t_len, c, &xi_sum, &gamma0);
    chain_closed_form_update(store, xi_sum, gamma0);
  }

  // Row weights for the emission updates: every row on regime 0 while
  // pretraining the shared backbone; the smoothed posterior (tempered while
  // annealing) afterwards; its one-hot argmax during the hard tail.
  Tensor row_weights = post.gamma;
  if (phase == Stage1Phase::kPretrain) {
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t j = 0; j < c; ++j)
        row_weights.at(t, j) = j == 0 ? 1.0 : 0.0;
  } else if (phase == Stage1Phase::kHard) {
    for (std::size_t t = 0; t < t_len; ++t) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j)
        if (row_weights.at(t, j) > row_weights.at(t, best)) best = j;
      for (std::size_t j = 0; j < c; ++j)
        row_weights.at(t, j) = j == best ? 1.0 : 0.0;
    }
  } else if (temperature > 1.0) {
    const double inv_t = 1.0 / temperature;
    for (std::size_t t = 0; t < t_len; ++t) {
      double norm = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        double& w = row_weights.at(t, j);
        w = std::pow(std::max(w, 1e-300), inv_t);
        norm += w;
      }
      for (std::size_t j = 0; j < c; ++j) row_weights.at(t, j) /= norm;
    }
  }

  // M-steps for the emission networks: posterior-weighted minibatches of
  // conditional rows, several per posterior refresh.
  const std::size_t inner = std::max<std::size_t>(1, cfg.stage1_inner_steps);
  const std::size_t rows_per =
      t_len >= 2 ? std::min<std::size_t>(cfg.stage1_batch_rows, t_len - 1)
                 : 0;
  for (std::size_t it = 0; it < inner; ++it) {
    std::vector<Tensor>& grads = *grads_scratch;
    for (Tensor& g : grads) std::fill(g.values.begin(), g.values.end(), 0.0);
    Tape tp;
    const Bound b = bind_params(tp, store, true, {"arhmm.em", "arhmm.init_"});
    std::vector<NodeId> terms;
    {
      Tensor x0({1, spec.m}, 0.0);
      for (std::size_t j = 0; j < spec.m; ++j) x0.at(0, j) = x.at(0, j);
      Tensor w0({1, c}, 0.0);
      for (std::size_t j = 0; j < c; ++j) w0.at(0, j) = row_weights.at(0, j);
      const NodeId init_row =
          initial_log_row_node(tp, b, spec, tp.constant(x0));
      terms.push_back(tp.sum(tp.mul(init_row, tp.constant(w0))));
    }
    if (rows_per > 0) {
      Tensor xp({rows_per, spec.m}, 0.0), xc({rows_per, spec.m}, 0.0);
      Tensor gslice({rows_per, c}, 0.0);
      for (std::size_t r = 0; r < rows_per; ++r) {
        const std::size_t s = 1 + rng_rows.below(t_len - 1);
        for (std::size_t j = 0; j < spec.m; ++j) {
          xp.at(r, j) = x.at(s - 1, j);
          xc.at(r, j) = x.at(s, j);
        }
        for (std::size_t j = 0; j < c; ++j)
          gslice.at(r, j) = row_weights.at(s, j);
      }
      const NodeId emit = emission_log_matrix_node(
          tp, b, spec, tp.constant(xp), tp.constant(xc));
      terms.push_back(tp.sum(tp.mul(emit, tp.constant(gslice))));
    }
    const NodeId loss =
        terms.size() == 1 ? terms[0] : tp.add(terms[0], terms[1]);
    const double scale = -1.0 / static_cast<double>(rows_per + 1);
    const std::vector<Tensor> g = tp.backward(loss);
    accumulate(store, b, g, scale, &grads);
    adam.apply(store, grads, mask, lr);
  }
  return nll;
}

// Try several random offset draws at the backbone split, give each a few
// probe passes of the posterior/update cycle, and keep the draw whose
// full-sequence likelihood ends best. Leaves the chosen chain parameters in
// the store.
void split_with_restarts(ParamStore& store, const ModelSpecs& specs,
                         const Tensor& x, const TrainConfig& cfg,
                         const std::vector<char>& mask, Rng& rng_split,
                         std::vector<Tensor>* grads_scratch) {
  const std::size_t restarts =
      std::max<std::size_t>(1, cfg.stage1_split_restarts);
  constexpr std::size_t kProbeEpochs = 3;

  std::vector<std::size_t> chain_ids;
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store.name_at(i).rfind("arhmm.", 0) == 0) chain_ids.push_back(i);
  std::vector<Tensor> base;
  base.reserve(chain_ids.size());
  for (const std::size_t i : chain_ids) base.push_back(store.at(i));

  double best_nll = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best;
  for (std::size_t r = 0; r < restarts; ++r) {
    for (std::size_t k = 0; k < chain_ids.size(); ++k)
      store.at(chain_ids[k]) = base[k];
    split_shared_backbone(store, specs.arhmm, rng_split);
    Adam adam(store, cfg);
    Rng rng_rows = rng_split.fork(r + 1);
    for (std::size_t p = 0; p < kProbeEpochs; ++p)
      stage1_epoch(store, specs, x, adam, mask, cfg.stage1_lr, cfg, p,
                   Stage1Phase::kSoft, 1.0, /*chain_update=*/false, rng_rows,
                   grads_scratch);
    const PosteriorMarginals post = forward_backward(store, specs.arhmm, x);
    const double nll =
        -post.log_likelihood / static_cast<double>(x.rows());
    if (nll < best_nll) {
      best_nll = nll;
      best.clear();
      for (const std::size_t i : chain_ids) best.push_back(store.at(i));
    }
  }
  for (std::size_t k = 0; k < chain_ids.size(); ++k)
    store.at(chain_ids[k]) = best[k];
}

Tensor window_soft_gamma(const ParamStore& store, const ArhmmSpec& spec,
                         const Tensor& x_rows, std::size_t lag) {
  const std::size_t w = x_rows.rows() - lag;
  Tensor xp({w, spec.m}, 0.0), xc({w, spec.m}, 0.0);
  for (std::size_t r = 0; r < w; ++r)
    for (std::size_t j = 0; j < spec.m; ++j) {
      xp.at(r, j) = x_rows.at(lag - 1 + r, j);
      xc.at(r, j) = x_rows.at(lag + r, j);
    }
  const Tensor emit = emission_log_matrix_cond(store, spec, xp, xc);
  const Tensor log_init({1, spec.c},
                        -std::log(static_cast<double>(spec.c)));
  const FbResult fb = forward_backward_kernel(log_init, arhmm_log_trans(store),
                                              emit, false);
  return fb.gamma;
}

struct StepLosses {
  double hmm = 0.0, recon = 0.0, kld = 0.0, total = 0.0;
};

StepLosses joint_step(ParamStore& store, const ModelSpecs& specs,
                      const TrainConfig& cfg, const Tensor& x,
                      const std::vector<std::uint32_t>& c_hat, Rng& rng_win,
                      Rng& rng_noise, Adam& adam,
                      const std::vector<char>& mask, double lr,
                      std::size_t step_index) {
  const std::size_t lag = specs.flow.lag;
  const std::size_t w = cfg.window;
  const std::size_t bsz = cfg.batch;
  const std::size_t m = specs.vae.m;
  const std::size_t n = specs.vae.n;
  const std::size_t t_len = x.rows();
  const std::size_t span = t_len - w - lag + 1;  // starts in [lag, t_len - w]

  Tape tp;
  const Bound b = bind_params(tp, store, true, {"vae.", "flow.", "arhmm."});

  NodeId hmm_sum = 0, recon_sum = 0, kld_sum = 0;
  for (std::size_t wi = 0; wi < bsz; ++wi) {
    const std::size_t s = lag + rng_win.below(span);
    Tensor x_rows({w + lag, m}, 0.0);
    for (std::size_t r = 0; r < w + lag; ++r)
      for (std::size_t j = 0; j < m; ++j)
        x_rows.at(r, j) = x.at(s - lag + r, j);
    const std::vector<std::uint32_t> c_core(c_hat.begin() + s,
                                            c_hat.begin() + s + w);
    Tensor u({w + lag, n}, 0.0);
    for (double& v : u.values) v = rng_noise.normal();

    Tensor soft;
    const Tensor* softp = nullptr;
    if (cfg.soft_regimes) {
      soft = window_soft_gamma(store, specs.arhmm, x_rows, lag);
      softp = &soft;
    }
    const WindowGraph g =
        window_graph(tp, b, specs, x_rows, c_core, u, softp);
    if (wi == 0) {
      hmm_sum = g.hmm_nll;
      recon_sum = g.recon_sq_sum;
      kld_sum = g.kld_sum;
    } else {
      hmm_sum = tp.add(hmm_sum, g.hmm_nll);
      recon_sum = tp.add(recon_sum, g.recon_sq_sum);
      kld_sum = tp.add(kld_sum, g.kld_sum);
    }
  }

  const double core_rows = static_cast<double>(bsz * w);
  const NodeId hmm_mean = tp.scale_add(hmm_sum, 1.0 / core_rows, 0.0);
  const NodeId recon_mean = tp.scale_add(
      recon_sum, 1.0 / static_cast<double>(bsz * (w + lag) * m), 0.0);
  const NodeId kld_mean = tp.scale_add(kld_sum, 1.0 / core_rows, 0.0);
  const NodeId total =
      tp.add(tp.add(tp.scale_add(hmm_mean, cfg.lambda_h, 0.0), recon_mean),
             tp.scale_add(kld_mean, cfg.beta, 0.0));

  StepLosses losses;
  losses.hmm = tp.val(hmm_mean).values[0];
  losses.recon = tp.val(recon_mean).values[0];
  losses.kld = tp.val(kld_mean).values[0];
  losses.total = tp.val(total).values[0];
  if (!std::isfinite(losses.total) ||
      losses.total > cfg.divergence_threshold) {
    std::string offender = "chain";
    if (!std::isfinite(losses.recon))
      offender = "reconstruction";
    else if (!std::isfinite(losses.kld))
      offender = "kl";
    else if (std::isfinite(losses.hmm)) {
      offender = "chain";
      double worst = std::fabs(losses.hmm) * cfg.lambda_h;
      if (std::fabs(losses.recon) > worst) {
        offender = "reconstruction";
        worst = std::fabs(losses.recon);
      }
      if (std::fabs(losses.kld) * cfg.beta > worst) offender = "kl";
    }
    throw DivergenceError(
        "joint loss diverged at step " + std::to_string(step_index) +
        ": total=" + std::to_string(losses.total) +
        " chain=" + std::to_string(losses.hmm) +
        " reconstruction=" + std::to_string(losses.recon) +
        " kl=" + std::to_string(losses.kld) + "; offending term: " + offender);
  }

  const std::vector<Tensor> tape_grads = tp.backward(total);
  std::vector<Tensor> grads = zeros_like(store);
  accumulate(store, b, tape_grads, 1.0, &grads);
  adam.apply(store, grads, mask, lr);
  return losses;
}

MetricSnapshot make_snapshot(const ParamStore& store, const ModelSpecs& specs,
                             const Dataset& ds, const Tensor& x,
                             std::size_t epoch) {
  MetricSnapshot snap;
  snap.epoch = epoch;
  Tensor mean, log_var;
  vae_encode_plain(store, specs.vae, x, mean, log_var);
  if (ds.z.rank() == 2 && ds.z.cols() == mean.cols() &&
      ds.z.rows() == mean.rows())
    snap.mcc_spearman = mcc(ds.z, mean, CorrMode::kSpearman).mcc;
  const std::vector<std::uint32_t> ch = viterbi(store, specs.arhmm, x);
  const RegimeReport rr = regime_accuracy(ds.c, ch, specs.arhmm.c);
  snap.regime_accuracy = rr.accuracy;
  Tensor a_est = arhmm_log_trans(store);
  for (double& v : a_est.values) v = std::exp(v);
  snap.a_mse = transition_mse(ds.a, a_est, rr.sigma);
  return snap;
}

}  // namespace

TrainResult train(const Dataset& ds, const TrainConfig& cfg,
                  TrainLogger* logger) {
  validate_train_config(cfg);
  const auto wall_start = std::chrono::steady_clock::now();

  const std::size_t t_len = ds.x.rows();
  const std::size_t m = ds.x.cols();
  const std::size_t lag = ds.meta.lag == 0 ? 1 : ds.meta.lag;
  const std::size_t n = cfg.latent_dim == 0 ? ds.meta.n : cfg.latent_dim;
  const std::size_t c = ds.meta.c;
  if (c == 0) throw ValueError("train: dataset has no regimes");
  if (n == 0) throw ValueError("train: latent dimension unresolved");
  if (cfg.window <= lag)
    throw ValueError("train config: window must exceed the history length");
  if (t_len < cfg.window + lag + 1)
    throw ValueError("train: sequence of " + std::to_string(t_len) +
                     " steps is too short for windows of " +
                     std::to_string(cfg.window));
  if (!ds.x.all_finite())
    throw ValueError("train: observations contain non-finite values");

  const ModelSpecs specs = make_model_specs(m, n, c, lag, cfg);

  Rng root(cfg.seed);
  Rng rng_init = root.fork(10);
  Rng rng_win = root.fork(11);
  Rng rng_noise = root.fork(12);

  ParamStore store;
  {
    Tensor mean, scale;
    fit_standardizer(ds.x, cfg.standardize, &mean, &scale);
    store.add(kMeanName, std::move(mean));
    store.add(kScaleName, std::move(scale));
  }
  init_vae(store, specs.vae, rng_init);
  init_arhmm(store, specs.arhmm, rng_init);
  init_flow(store, specs.flow, rng_init);

  const Tensor x = standardize(ds.x, store.get(kMeanName),
                               store.get(kScaleName));

  const std::vector<char> mask_arhmm = prefix_mask(store, {"arhmm."});
  const std::vector<char> mask_latent = prefix_mask(store, {"vae.", "flow."});
  const std::vector<char> mask_all =
      prefix_mask(store, {"vae.", "flow.", "arhmm."});

  TrainResult result;
  TrainReport& report = result.report;
  std::size_t epoch_counter = 0;

  // Stage 1: chain-only full-length passes.
  {
    Adam adam(store, cfg);
    Plateau plateau;
    double lr = cfg.stage1_lr;
    Rng rng_rows = root.fork(13);
    Rng rng_split = root.fork(14);
    std::vector<Tensor> grads_scratch = zeros_like(store);
    const std::size_t pretrain =
        cfg.stage1_epochs == 0
            ? 0
            : std::min(cfg.stage1_pretrain_epochs, cfg.stage1_epochs - 1);
    const std::size_t hard_tail =
        std::min(cfg.stage1_hard_epochs, cfg.stage1_epochs - pretrain);
    for (std::size_t e = 0; e < cfg.stage1_epochs; ++e) {
      if (pretrain > 0 && e == pretrain) {
        split_with_restarts(store, specs, x, cfg, mask_arhmm, rng_split,
                            &grads_scratch);
        adam = Adam(store, cfg);  // stale moments would drag the clones back
      }
      Stage1Phase phase = Stage1Phase::kSoft;
      if (e < pretrain) phase = Stage1Phase::kPretrain;
      else if (e >= cfg.stage1_epochs - hard_tail) phase = Stage1Phase::kHard;
      double temp = 1.0;
      if (phase == Stage1Phase::kSoft && cfg.stage1_anneal_epochs > 0 &&
          cfg.stage1_temp > 1.0) {
        const double frac = static_cast<double>(e - pretrain) /
                            static_cast<double>(cfg.stage1_anneal_epochs);
        if (frac < 1.0) temp = 1.0 + (cfg.stage1_temp - 1.0) * (1.0 - frac);
      }
      const bool chain_update = e >= cfg.stage1_chain_freeze_epochs;
      const double nll =
          stage1_epoch(store, specs, x, adam, mask_arhmm, lr, cfg, e, phase,
                       temp, chain_update, rng_rows, &grads_scratch);
      EpochStats st;
      st.epoch = epoch_counter;
      st.stage = "chain";
      st.l_hmm = nll;
      st.total = nll;
      st.lr = lr;
      report.epochs.push_back(st);
      if (logger) logger->on_epoch(st);
      plateau.update(nll, cfg, &lr);
      ++epoch_counter;
    }
  }

  // Stage 2: joint windowed training with periodically refreshed labels.
  std::vector<std::uint32_t> c_hat = viterbi(store, specs.arhmm, x);
  {
    Adam adam(store, cfg);
    Plateau plateau;
    double lr = cfg.lr;
    const std::size_t steps_per_epoch =
        std::max<std::size_t>(1, t_len / (cfg.batch * cfg.window));
    std::size_t gstep = 0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      StepLosses sum;
      for (std::size_t k = 0; k < steps_per_epoch; ++k) {
        if (gstep > 0 && gstep % cfg.redecode_period == 0) {
          // Windowed chain gradients use a uniform restart at each window
          // start, which slowly biases the transition estimate; pin it back
          // to the exact full-sequence estimate whenever labels refresh.
          chain_refresh(store, specs.arhmm, x);
          c_hat = viterbi(store, specs.arhmm, x);
        }
        const std::vector<char>& mask =
            !cfg.alternate ? mask_all
                           : (gstep % 2 == 0 ? mask_latent : mask_arhmm);
        const StepLosses sl =
            joint_step(store, specs, cfg, x, c_hat, rng_win, rng_noise, adam,
                       mask, lr, gstep);
        sum.hmm += sl.hmm;
        sum.recon += sl.recon;
        sum.kld += sl.kld;
        sum.total += sl.total;
        ++gstep;
      }
      const double inv = 1.0 / static_cast<double>(steps_per_epoch);
      EpochStats st;
      st.epoch = epoch_counter;
      st.stage = "joint";
      st.l_hmm = sum.hmm * inv;
      st.l_recon = sum.recon * inv;
      st.l_kld = sum.kld * inv;
      st.total = sum.total * inv;
      st.lr = lr;
      report.epochs.push_back(st);
      if (logger) logger->on_epoch(st);
      plateau.update(st.total, cfg, &lr);
      if (cfg.snapshot_metrics &&
          (e % cfg.snapshot_every == 0 || e + 1 == cfg.epochs)) {
        const MetricSnapshot snap =
            make_snapshot(store, specs, ds, x, epoch_counter);
        report.snapshots.push_back(snap);
        if (logger) logger->on_snapshot(snap);
      }
      ++epoch_counter;
    }
    report.total_steps = gstep;
  }

  chain_refresh(store, specs.arhmm, x);
  result.c_hat = viterbi(store, specs.arhmm, x);
  write_model_meta(store, specs);
  result.params = std::move(store);
  result.specs = specs;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    wall_start)
          .count();
  return result;
}

}  // namespace nctrl
