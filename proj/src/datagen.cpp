#include "nctrl/datagen.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "nctrl/checkpoint.hpp"
#include "nctrl/error.hpp"
#include "nctrl/io_util.hpp"
#include "nctrl/linalg.hpp"

namespace nctrl {

void validate_markov_chain(const MarkovChainParams& p, double tol) {
  const std::size_t c = p.a.rows();
  if (p.a.cols() != c) throw ValueError("transition matrix must be square");
  if (p.pi0.numel() != c)
    throw ValueError("initial distribution size does not match state count");
  for (std::size_t i = 0; i < c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (p.a.at(i, j) < 0.0) throw ValueError("negative transition probability");
      s += p.a.at(i, j);
    }
    if (std::abs(s - 1.0) > tol)
      throw ValueError("transition row " + std::to_string(i) +
                       " sums to " + std::to_string(s));
  }
  double s = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    if (p.pi0.values[j] < 0.0) throw ValueError("negative initial probability");
    s += p.pi0.values[j];
  }
  if (std::abs(s - 1.0) > tol)
    throw ValueError("initial distribution sums to " + std::to_string(s));
}

MarkovChainParams sample_regime_chain(std::size_t c, double diag_boost,
                                      Rng& rng) {
  if (c == 0) throw ValueError("regime count must be positive");
  MarkovChainParams p;
  p.a = Tensor({c, c});
  for (std::size_t i = 0; i < c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      // Dirichlet(1,...,1) row via normalized exponentials.
      const double e = -std::log(1.0 - rng.uniform());
      p.a.at(i, j) = e;
      s += e;
    }
    for (std::size_t j = 0; j < c; ++j) p.a.at(i, j) /= s;
    p.a.at(i, i) += diag_boost;
    s = 1.0 + diag_boost;
    for (std::size_t j = 0; j < c; ++j) p.a.at(i, j) /= s;
    // Exact renormalization against accumulated rounding.
    s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += p.a.at(i, j);
    for (std::size_t j = 0; j < c; ++j) p.a.at(i, j) /= s;
  }
  p.pi0 = Tensor({1, c}, 1.0 / static_cast<double>(c));
  validate_markov_chain(p);
  return p;
}

std::vector<std::uint32_t> sample_markov_chain(const MarkovChainParams& p,
                                               std::size_t t_len, Rng& rng) {
  validate_markov_chain(p);
  const std::size_t c = p.a.rows();
  std::vector<std::uint32_t> path(t_len);
  auto draw = [&](const double* probs) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t j = 0; j + 1 < c; ++j) {
      acc += probs[j];
      if (u < acc) return static_cast<std::uint32_t>(j);
    }
    return static_cast<std::uint32_t>(c - 1);
  };
  if (t_len == 0) return path;
  path[0] = draw(p.pi0.values.data());
  for (std::size_t t = 1; t < t_len; ++t)
    path[t] = draw(p.a.row_ptr(path[t - 1]));
  return path;
}

GroundTruthDynamics sample_dynamics(const GenConfig& cfg, Rng& rng) {
  GroundTruthDynamics dyn;
  dyn.n = cfg.n;
  dyn.lag = cfg.lag;
  dyn.kind = cfg.dyn_kind;
  dyn.sigma.assign(cfg.c, cfg.sigma);
  const std::size_t in_dim = cfg.n * cfg.lag;

  for (std::size_t r = 0; r < cfg.c; ++r) {
    MlpParams net;
    net.slope = cfg.slope;
    if (cfg.dyn_kind == "linear") {
      Tensor w = random_orthogonal(std::max(in_dim, cfg.n), rng);
      // Keep the upper-left block; scale below 1 so rollouts contract.
      Tensor wk({in_dim, cfg.n});
      for (std::size_t i = 0; i < in_dim; ++i)
        for (std::size_t j = 0; j < cfg.n; ++j) wk.at(i, j) = 0.7 * w.at(i, j);
      net.w = {std::move(wk)};
      net.b = {Tensor({1, cfg.n}, 0.0)};
      net.act = {Act::kIdentity};
    } else if (cfg.dyn_kind == "mlp") {
      net.w = {semi_orthogonal(in_dim, cfg.dyn_hidden, rng),
               semi_orthogonal(cfg.dyn_hidden, cfg.n, rng)};
      Tensor b0({1, cfg.dyn_hidden});
      for (double& v : b0.values) v = rng.uniform(-0.5, 0.5);
      net.b = {std::move(b0), Tensor({1, cfg.n}, 0.0)};
      net.act = {Act::kLeakyRelu, Act::kIdentity};
    } else {
      throw ValueError("unknown dynamics kind: " + cfg.dyn_kind);
    }
    dyn.nets.push_back(std::move(net));
  }

  // Regimes must actually differ: probe a few random histories.
  Rng probe_rng = rng.fork(77);
  for (std::size_t a = 0; a < cfg.c; ++a) {
    for (std::size_t b = a + 1; b < cfg.c; ++b) {
      double best = 0.0;
      for (int probe = 0; probe < 8; ++probe) {
        std::vector<double> h(in_dim);
        for (double& v : h) v = probe_rng.normal();
        const std::vector<double> fa = mlp_apply(dyn.nets[a], h.data());
        const std::vector<double> fb = mlp_apply(dyn.nets[b], h.data());
        double d2 = 0.0;
        for (std::size_t i = 0; i < cfg.n; ++i)
          d2 += (fa[i] - fb[i]) * (fa[i] - fb[i]);
        best = std::max(best, std::sqrt(d2));
      }
      if (best <= 1e-3)
        throw ValueError("sampled regime dynamics " + std::to_string(a) +
                         " and " + std::to_string(b) + " are indistinguishable");
    }
  }
  return dyn;
}

void roll_latents(const GroundTruthDynamics& dyn,
                  const std::vector<std::uint32_t>& c, Rng& rng, Tensor* z,
                  Tensor* eps) {
  const std::size_t t_len = c.size(), n = dyn.n, lag = dyn.lag;
  if (t_len <= lag) throw ValueError("sequence shorter than the lag");
  for (std::uint32_t ct : c)
    if (ct >= dyn.regimes())
      throw ValueError("regime label out of range: " + std::to_string(ct));

  *z = Tensor({t_len, n});
  *eps = Tensor({t_len, n});
  for (std::size_t t = 0; t < lag; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      const double e = rng.normal();
      eps->at(t, i) = e;
      z->at(t, i) = e;  // burn-in rows are the raw draws
    }

  std::vector<double> hist(n * lag);
  for (std::size_t t = lag; t < t_len; ++t) {
    for (std::size_t l = 0; l < lag; ++l)  // oldest first
      for (std::size_t i = 0; i < n; ++i)
        hist[l * n + i] = z->at(t - lag + l, i);
    const std::vector<double> mu = mlp_apply(dyn.nets[c[t]], hist.data());
    const double s = dyn.sigma[c[t]];
    for (std::size_t i = 0; i < n; ++i) {
      const double e = rng.normal();
      eps->at(t, i) = e;
      const double v = mu[i] + s * e;
      if (!std::isfinite(v) || std::abs(v) > 1e9)
        throw ValueError("latent rollout diverged at t=" + std::to_string(t));
      z->at(t, i) = v;
    }
  }
}

namespace {

// Uniform(-1,1) entries, unit-norm columns, redrawn until the spectral
// condition number clears kappa_max.
Tensor filtered_square_matrix(std::size_t n, double kappa_max, Rng& rng) {
  constexpr int kBudget = 10000;
  for (int attempt = 0; attempt < kBudget; ++attempt) {
    Tensor w({n, n});
    for (double& v : w.values) v = rng.uniform(-1.0, 1.0);
    for (std::size_t j = 0; j < n; ++j) {
      double norm = 0.0;
      for (std::size_t i = 0; i < n; ++i) norm += w.at(i, j) * w.at(i, j);
      norm = std::sqrt(norm);
      if (norm < 1e-9) {
        norm = 1.0;
        w.at(j, j) = 1.0;
      }
      for (std::size_t i = 0; i < n; ++i) w.at(i, j) /= norm;
    }
    if (cond2(w) <= kappa_max) return w;
  }
  throw ValueError("mixing: condition-number rejection budget exhausted (" +
                   std::to_string(kBudget) + " attempts, bound " +
                   std::to_string(kappa_max) + ")");
}

}  // namespace

Mixing sample_mixing(const GenConfig& cfg, Rng& rng) {
  Mixing mx;
  mx.spec.kind = cfg.mixing;
  mx.spec.layers = cfg.mixing == MixingKind::kOrthogonal ? 1 : cfg.mixing_layers;
  mx.spec.kappa_max = cfg.kappa_max;
  mx.spec.slope = cfg.slope;
  mx.net.slope = cfg.slope;
  if (cfg.mixing == MixingKind::kOrthogonal) {
    mx.net.w = {random_orthogonal(cfg.n, rng)};
    mx.net.b = {Tensor({1, cfg.n}, 0.0)};
    mx.net.act = {Act::kIdentity};
  } else {
    if (cfg.mixing_layers == 0) throw ValueError("mixing needs >= 1 layer");
    for (std::size_t l = 0; l < cfg.mixing_layers; ++l) {
      mx.net.w.push_back(filtered_square_matrix(cfg.n, cfg.kappa_max, rng));
      mx.net.b.push_back(Tensor({1, cfg.n}, 0.0));
      mx.net.act.push_back(l + 1 < cfg.mixing_layers ? Act::kLeakyRelu
                                                     : Act::kIdentity);
    }
  }
  return mx;
}

Tensor mix(const Mixing& mixing, const Tensor& z) {
  return mlp_apply_batch(mixing.net, z);
}

Dataset make_dataset(const GenConfig& cfg) {
  if (cfg.lag == 0) throw ValueError("lag must be >= 1");
  Rng root(cfg.seed);
  Rng chain_rng = root.fork(1);
  Rng dyn_rng = root.fork(2);
  Rng roll_rng = root.fork(3);
  Rng mix_rng = root.fork(4);

  Dataset ds;
  const MarkovChainParams chain = sample_regime_chain(cfg.c, cfg.diag_boost,
                                                      chain_rng);
  ds.a = chain.a;
  ds.c = sample_markov_chain(chain, cfg.t_len, chain_rng);
  ds.dyn = sample_dynamics(cfg, dyn_rng);
  Tensor eps;
  roll_latents(ds.dyn, ds.c, roll_rng, &ds.z, &eps);
  ds.mixing = sample_mixing(cfg, mix_rng);
  ds.x = mix(ds.mixing, ds.z);

  ds.meta.t_len = cfg.t_len;
  ds.meta.n = cfg.n;
  ds.meta.m = cfg.n;
  ds.meta.c = cfg.c;
  ds.meta.lag = cfg.lag;
  ds.meta.seed = cfg.seed;
  ds.meta.mixing_kind =
      cfg.mixing == MixingKind::kOrthogonal ? "orthogonal" : "mlp";
  ds.meta.mixing_layers = ds.mixing.spec.layers;
  ds.meta.dyn_kind = cfg.dyn_kind;
  ds.meta.sigma = ds.dyn.sigma;
  return ds;
}

namespace {

ParamStore mixing_to_store(const Mixing& mx) {
  ParamStore store;
  Tensor spec({1, 4});
  spec.values[0] = mx.spec.kind == MixingKind::kOrthogonal ? 0.0 : 1.0;
  spec.values[1] = static_cast<double>(mx.spec.layers);
  spec.values[2] = mx.spec.kappa_max;
  spec.values[3] = mx.spec.slope;
  store.add("mixing.spec", std::move(spec));
  mlp_params_to_store(mx.net, "mixing", store);
  return store;
}

Mixing mixing_from_store(const ParamStore& store) {
  Mixing mx;
  const Tensor& spec = store.get("mixing.spec");
  mx.spec.kind = spec.values[0] == 0.0 ? MixingKind::kOrthogonal : MixingKind::kMlp;
  mx.spec.layers = static_cast<std::size_t>(spec.values[1]);
  mx.spec.kappa_max = spec.values[2];
  mx.spec.slope = spec.values[3];
  mx.net = mlp_params_from_store(store, "mixing");
  return mx;
}

ParamStore dynamics_to_store(const GroundTruthDynamics& dyn) {
  ParamStore store;
  Tensor meta({1, 4});
  meta.values[0] = static_cast<double>(dyn.n);
  meta.values[1] = static_cast<double>(dyn.lag);
  meta.values[2] = static_cast<double>(dyn.regimes());
  meta.values[3] = dyn.kind == "linear" ? 1.0 : 0.0;
  store.add("dyn.meta", std::move(meta));
  store.add("dyn.sigma", Tensor::row(dyn.sigma));
  for (std::size_t r = 0; r < dyn.regimes(); ++r)
    mlp_params_to_store(dyn.nets[r], "dyn" + std::to_string(r), store);
  return store;
}

GroundTruthDynamics dynamics_from_store(const ParamStore& store) {
  GroundTruthDynamics dyn;
  const Tensor& meta = store.get("dyn.meta");
  dyn.n = static_cast<std::size_t>(meta.values[0]);
  dyn.lag = static_cast<std::size_t>(meta.values[1]);
  const std::size_t c = static_cast<std::size_t>(meta.values[2]);
  dyn.kind = meta.values[3] == 1.0 ? "linear" : "mlp";
  dyn.sigma = store.get("dyn.sigma").values;
  for (std::size_t r = 0; r < c; ++r)
    dyn.nets.push_back(mlp_params_from_store(store, "dyn" + std::to_string(r)));
  return dyn;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir, bool csv) {
  ensure_dir(dir);
  write_f64_file(dir + "/x.f64", ds.x.values);
  write_f64_file(dir + "/z.f64", ds.z.values);
  write_u32_file(dir + "/c.u32", ds.c);
  write_f64_file(dir + "/A.f64", ds.a.values);
  save_checkpoint(mixing_to_store(ds.mixing), dir + "/mixing.ckpt");
  save_checkpoint(dynamics_to_store(ds.dyn), dir + "/dynamics.ckpt");

  nlohmann::json crc;
  for (const char* f :
       {"x.f64", "z.f64", "c.u32", "A.f64", "mixing.ckpt", "dynamics.ckpt"})
    crc[f] = file_crc32(dir + "/" + f);

  const nlohmann::json meta = {
      {"format_version", ds.meta.format_version},
      {"t", ds.meta.t_len},
      {"n", ds.meta.n},
      {"m", ds.meta.m},
      {"c", ds.meta.c},
      {"lag", ds.meta.lag},
      {"seed", ds.meta.seed},
      {"mixing_kind", ds.meta.mixing_kind},
      {"mixing_layers", ds.meta.mixing_layers},
      {"dyn_kind", ds.meta.dyn_kind},
      {"sigma", ds.meta.sigma},
      {"crc32", crc},
  };
  std::ofstream f(dir + "/meta.json", std::ios::trunc);
  if (!f) throw IoError("cannot write " + dir + "/meta.json");
  f << meta.dump(2) << "\n";
  f.close();

  if (csv) {
    write_csv_matrix(dir + "/x.csv", ds.x, "");
    write_csv_matrix(dir + "/z.csv", ds.z, "");
    std::ofstream cf(dir + "/c.csv", std::ios::trunc);
    for (std::uint32_t v : ds.c) cf << v << "\n";
  }
}

Dataset read_dataset(const std::string& dir) {
  const std::string meta_path = dir + "/meta.json";
  if (!path_exists(meta_path))
    throw IoError("dataset metadata missing: " + meta_path);
  nlohmann::json meta;
  try {
    std::ifstream f(meta_path);
    f >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad dataset metadata " + meta_path + ": " + e.what());
  }

  Dataset ds;
  try {
    ds.meta.format_version = meta.at("format_version");
    if (ds.meta.format_version != 1)
      throw FormatError("unsupported dataset format version " +
                        std::to_string(ds.meta.format_version));
    ds.meta.t_len = meta.at("t");
    ds.meta.n = meta.at("n");
    ds.meta.m = meta.at("m");
    ds.meta.c = meta.at("c");
    ds.meta.lag = meta.at("lag");
    ds.meta.seed = meta.at("seed");
    ds.meta.mixing_kind = meta.at("mixing_kind");
    ds.meta.mixing_layers = meta.at("mixing_layers");
    ds.meta.dyn_kind = meta.at("dyn_kind");
    ds.meta.sigma = meta.at("sigma").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("incomplete dataset metadata " + meta_path + ": " +
                      e.what());
  }

  for (const auto& [file, want] : meta.at("crc32").items()) {
    const std::string path = dir + "/" + file;
    if (!path_exists(path)) throw IoError("dataset file missing: " + path);
    const std::uint32_t got = file_crc32(path);
    if (got != want.get<std::uint32_t>())
      throw ChecksumError("dataset file corrupted (checksum mismatch): " + path);
  }

  const std::size_t t_len = ds.meta.t_len;
  std::vector<double> xv = read_f64_file(dir + "/x.f64");
  std::vector<double> zv = read_f64_file(dir + "/z.f64");
  ds.c = read_u32_file(dir + "/c.u32");
  std::vector<double> av = read_f64_file(dir + "/A.f64");
  if (xv.size() != t_len * ds.meta.m || zv.size() != t_len * ds.meta.n ||
      ds.c.size() != t_len || av.size() != ds.meta.c * ds.meta.c)
    throw FormatError("dataset array sizes do not match metadata in " + dir);
  ds.x = Tensor::matrix(t_len, ds.meta.m, std::move(xv));
  ds.z = Tensor::matrix(t_len, ds.meta.n, std::move(zv));
  ds.a = Tensor::matrix(ds.meta.c, ds.meta.c, std::move(av));
  ds.mixing = mixing_from_store(load_checkpoint(dir + "/mixing.ckpt"));
  ds.dyn = dynamics_from_store(load_checkpoint(dir + "/dynamics.ckpt"));
  return ds;
}

}  // namespace nctrl
