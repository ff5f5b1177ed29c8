#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nctrl/datagen.hpp"
#include "nctrl/error.hpp"
#include "nctrl/linalg.hpp"
#include "nctrl/metrics.hpp"
#include "nctrl/nn.hpp"
#include "nctrl/rng.hpp"
#include "nctrl/tensor.hpp"

using namespace nctrl;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / ("nctrl_datagen_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void flip_byte(const std::filesystem::path& path, std::streamoff offset) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  REQUIRE(f.good());
  f.seekg(offset);
  char byte = 0;
  f.read(&byte, 1);
  byte = static_cast<char>(byte ^ 0x40);
  f.seekp(offset);
  f.write(&byte, 1);
}

MarkovChainParams chain_from(const std::vector<std::vector<double>>& a,
                             const std::vector<double>& pi0) {
  MarkovChainParams p;
  const std::size_t c = a.size();
  p.a = Tensor({c, c}, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) p.a.at(i, j) = a[i][j];
  p.pi0 = Tensor({1, c}, 0.0);
  for (std::size_t j = 0; j < c; ++j) p.pi0.at(0, j) = pi0[j];
  return p;
}

// Single-layer network with the given square weight matrix, zero bias,
// identity output.
MlpParams one_layer(const Tensor& w) {
  MlpParams p;
  p.w = {w};
  p.b = {Tensor({1, w.cols()}, 0.0)};
  p.act = {Act::kIdentity};
  return p;
}

GroundTruthDynamics manual_dynamics(std::size_t n, std::size_t regimes,
                                    const Tensor& w, double sigma) {
  GroundTruthDynamics dyn;
  dyn.n = n;
  dyn.lag = 1;
  dyn.kind = "linear";
  for (std::size_t r = 0; r < regimes; ++r) dyn.nets.push_back(one_layer(w));
  dyn.sigma.assign(regimes, sigma);
  return dyn;
}

double column_variance(const Tensor& m, std::size_t col,
                       const std::vector<std::size_t>& rows) {
  double mean = 0.0;
  for (const std::size_t r : rows) mean += m.at(r, col);
  mean /= static_cast<double>(rows.size());
  double var = 0.0;
  for (const std::size_t r : rows) {
    const double d = m.at(r, col) - mean;
    var += d * d;
  }
  return var / static_cast<double>(rows.size() - 1);
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("validate_markov_chain accepts valid and rejects broken chains") {
  const MarkovChainParams good =
      chain_from({{0.9, 0.1}, {0.3, 0.7}}, {0.5, 0.5});
  CHECK_NOTHROW(validate_markov_chain(good));

  MarkovChainParams bad_row = good;
  bad_row.a.at(0, 0) = 0.95;  // row sums to 1.05
  CHECK_THROWS_AS(validate_markov_chain(bad_row), ValueError);

  MarkovChainParams negative = good;
  negative.a.at(0, 0) = -0.1;
  negative.a.at(0, 1) = 1.1;
  CHECK_THROWS_AS(validate_markov_chain(negative), ValueError);

  MarkovChainParams bad_pi = good;
  bad_pi.pi0.at(0, 0) = 0.9;  // pi0 sums to 1.4
  CHECK_THROWS_AS(validate_markov_chain(bad_pi), ValueError);
}

TEST_CASE("absorbing chain stays in its start state") {
  const MarkovChainParams p = chain_from({{1, 0}, {0, 1}}, {1, 0});
  Rng rng(1);
  const std::vector<std::uint32_t> c = sample_markov_chain(p, 5, rng);
  CHECK(c == std::vector<std::uint32_t>({0, 0, 0, 0, 0}));
}

TEST_CASE("deterministic two-cycle alternates") {
  const MarkovChainParams p = chain_from({{0, 1}, {1, 0}}, {1, 0});
  Rng rng(2);
  const std::vector<std::uint32_t> c = sample_markov_chain(p, 4, rng);
  CHECK(c == std::vector<std::uint32_t>({0, 1, 0, 1}));
}

TEST_CASE("uniform chain: empirical transition frequencies match") {
  const std::size_t states = 5;
  MarkovChainParams p;
  p.a = Tensor({states, states}, 1.0 / states);
  p.pi0 = Tensor({1, states}, 1.0 / states);
  Rng rng(3);
  const std::size_t t_len = 20000;
  const std::vector<std::uint32_t> c = sample_markov_chain(p, t_len, rng);
  REQUIRE(c.size() == t_len);

  Tensor counts({states, states}, 0.0);
  for (std::size_t t = 0; t + 1 < t_len; ++t) counts.at(c[t], c[t + 1]) += 1.0;
  for (std::size_t i = 0; i < states; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < states; ++j) row += counts.at(i, j);
    REQUIRE(row > 0.0);
    for (std::size_t j = 0; j < states; ++j)
      CHECK(std::fabs(counts.at(i, j) / row - p.a.at(i, j)) <= 0.02);
  }
}

TEST_CASE("sampled regime chain is row-stochastic with a lifted diagonal") {
  Rng rng(4);
  const std::size_t states = 5;
  const MarkovChainParams p = sample_regime_chain(states, 0.5, rng);
  CHECK_NOTHROW(validate_markov_chain(p));
  for (std::size_t i = 0; i < states; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < states; ++j) {
      CHECK(p.a.at(i, j) >= 0.0);
      row += p.a.at(i, j);
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    // (raw + 0.5) / 1.5 with raw >= 0 puts every diagonal above 1/3.
    CHECK(p.a.at(i, i) >= 1.0 / 3.0);
  }
  for (std::size_t j = 0; j < states; ++j)
    CHECK(p.pi0.at(0, j) == doctest::Approx(1.0 / states));
}

TEST_CASE("sampled regime sequence is first-order Markov") {
  Rng rng(5);
  const std::size_t states = 5;
  const MarkovChainParams p = sample_regime_chain(states, 0.5, rng);
  const std::size_t t_len = 20000;
  const std::vector<std::uint32_t> c = sample_markov_chain(p, t_len, rng);

  // Second-order conditional frequencies must match first-order ones:
  // max |p(next | cur, prev) - p(next | cur)| small at this length.
  std::vector<double> pair(states * states, 0.0);
  std::vector<double> triple(states * states * states, 0.0);
  std::vector<double> cur_count(states, 0.0);
  Tensor first({states, states}, 0.0);
  for (std::size_t t = 0; t + 1 < t_len; ++t) {
    first.at(c[t], c[t + 1]) += 1.0;
    cur_count[c[t]] += 1.0;
  }
  for (std::size_t t = 0; t + 2 < t_len; ++t) {
    pair[c[t] * states + c[t + 1]] += 1.0;
    triple[(c[t] * states + c[t + 1]) * states + c[t + 2]] += 1.0;
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < states; ++a)
    for (std::size_t b = 0; b < states; ++b) {
      if (pair[a * states + b] < 1.0) continue;
      for (std::size_t d = 0; d < states; ++d) {
        const double second_order =
            triple[(a * states + b) * states + d] / pair[a * states + b];
        const double first_order = first.at(b, d) / cur_count[b];
        worst = std::max(worst, std::fabs(second_order - first_order));
      }
    }
  CHECK(worst <= 0.05);
}

TEST_CASE("zero networks with unit noise give white latents") {
  const std::size_t n = 4;
  const GroundTruthDynamics dyn =
      manual_dynamics(n, 2, Tensor({n, n}, 0.0), 1.0);
  Rng chain_rng(6);
  const MarkovChainParams p = sample_regime_chain(2, 0.5, chain_rng);
  const std::vector<std::uint32_t> c = sample_markov_chain(p, 20000, chain_rng);
  Rng rng(7);
  Tensor z, eps;
  roll_latents(dyn, c, rng, &z, &eps);
  REQUIRE(z.rows() == 20000);
  REQUIRE(z.cols() == n);
  // With a zero mean function and sigma 1 the latents ARE the raw draws.
  for (std::size_t i = 0; i < z.values.size(); ++i)
    CHECK(z.values[i] == eps.values[i]);
  // White noise: per-component lag-1 autocorrelation is tiny.
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> head(z.rows() - 1), tail(z.rows() - 1);
    for (std::size_t t = 0; t + 1 < z.rows(); ++t) {
      head[t] = z.at(t, j);
      tail[t] = z.at(t + 1, j);
    }
    CHECK(std::fabs(pearson(head, tail)) <= 0.03);
  }
}

TEST_CASE("identity map with zero noise freezes the trajectory") {
  const std::size_t n = 3;
  Tensor eye({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
  const GroundTruthDynamics dyn = manual_dynamics(n, 2, eye, 0.0);
  const std::vector<std::uint32_t> c(50, 1);
  Rng rng(8);
  Tensor z, eps;
  roll_latents(dyn, c, rng, &z, &eps);
  for (std::size_t t = 1; t < z.rows(); ++t)
    for (std::size_t j = 0; j < n; ++j) CHECK(z.at(t, j) == z.at(0, j));
}

TEST_CASE("generated dataset satisfies its construction equations") {
  GenConfig cfg;
  cfg.n = 8;
  cfg.c = 5;
  cfg.t_len = 20000;
  cfg.seed = 11;
  const Dataset ds = make_dataset(cfg);

  REQUIRE(ds.x.rows() == cfg.t_len);
  REQUIRE(ds.x.cols() == cfg.n);
  REQUIRE(ds.z.rows() == cfg.t_len);
  REQUIRE(ds.c.size() == cfg.t_len);
  CHECK(ds.meta.n == cfg.n);
  CHECK(ds.meta.m == cfg.n);
  CHECK(ds.meta.c == cfg.c);
  CHECK(ds.meta.t_len == cfg.t_len);
  CHECK(ds.meta.seed == cfg.seed);
  CHECK(ds.meta.mixing_kind == "mlp");
  CHECK(ds.meta.mixing_layers == 2);
  for (const std::uint32_t label : ds.c) CHECK(label < cfg.c);

  // Observations are exactly the stored mixing applied to the latents.
  const Tensor x2 = mix(ds.mixing, ds.z);
  REQUIRE(x2.values.size() == ds.x.values.size());
  for (std::size_t i = 0; i < x2.values.size(); ++i)
    CHECK(x2.values[i] == ds.x.values[i]);

  // Residuals against the stored transition networks recover the noise
  // scale: per regime and component, variance within 10% of sigma^2.
  Tensor resid({cfg.t_len, cfg.n}, 0.0);
  std::vector<std::vector<std::size_t>> rows_of(cfg.c);
  for (std::size_t t = ds.dyn.lag; t < cfg.t_len; ++t) {
    const std::vector<double> mu =
        mlp_apply(ds.dyn.nets[ds.c[t]], &ds.z.values[(t - 1) * cfg.n]);
    for (std::size_t j = 0; j < cfg.n; ++j)
      resid.at(t, j) = ds.z.at(t, j) - mu[j];
    rows_of[ds.c[t]].push_back(t);
  }
  for (std::size_t r = 0; r < cfg.c; ++r) {
    REQUIRE(rows_of[r].size() > 1000);
    const double want = ds.dyn.sigma[r] * ds.dyn.sigma[r];
    for (std::size_t j = 0; j < cfg.n; ++j) {
      const double got = column_variance(resid, j, rows_of[r]);
      CHECK(std::fabs(got - want) <= 0.10 * want);
    }
  }

  // Regimes are pairwise distinct as functions: some probe history
  // separates every pair of transition networks.
  Rng probe_rng(12);
  for (std::size_t a = 0; a < cfg.c; ++a)
    for (std::size_t b = a + 1; b < cfg.c; ++b) {
      double best = 0.0;
      for (int probe = 0; probe < 8; ++probe) {
        std::vector<double> h(cfg.n * ds.dyn.lag);
        for (double& v : h) v = probe_rng.normal();
        const std::vector<double> fa = mlp_apply(ds.dyn.nets[a], h.data());
        const std::vector<double> fb = mlp_apply(ds.dyn.nets[b], h.data());
        double gap = 0.0;
        for (std::size_t j = 0; j < cfg.n; ++j)
          gap += (fa[j] - fb[j]) * (fa[j] - fb[j]);
        best = std::max(best, std::sqrt(gap));
      }
      CHECK(best > 1e-3);
    }
}

TEST_CASE("same seed reproduces the dataset bitwise, new seed changes it") {
  GenConfig cfg;
  cfg.n = 4;
  cfg.c = 3;
  cfg.t_len = 500;
  cfg.seed = 21;
  const Dataset d1 = make_dataset(cfg);
  const Dataset d2 = make_dataset(cfg);
  CHECK(d1.x.values == d2.x.values);
  CHECK(d1.z.values == d2.z.values);
  CHECK(d1.c == d2.c);
  CHECK(d1.a.values == d2.a.values);

  cfg.seed = 22;
  const Dataset d3 = make_dataset(cfg);
  CHECK(d1.z.values != d3.z.values);
}

TEST_CASE("orthogonal mixing is an isometry with condition number 1") {
  GenConfig cfg;
  cfg.n = 6;
  cfg.mixing = MixingKind::kOrthogonal;
  Rng rng(31);
  const Mixing mixing = sample_mixing(cfg, rng);
  REQUIRE(mixing.net.w.size() == 1);
  CHECK(cond2(mixing.net.w[0]) == doctest::Approx(1.0).epsilon(1e-9));

  Rng zr(32);
  Tensor z({40, cfg.n}, 0.0);
  for (double& v : z.values) v = zr.normal();
  const Tensor x = mix(mixing, z);
  for (std::size_t t = 0; t < z.rows(); ++t) {
    double nz = 0.0, nx = 0.0;
    for (std::size_t j = 0; j < cfg.n; ++j) {
      nz += z.at(t, j) * z.at(t, j);
      nx += x.at(t, j) * x.at(t, j);
    }
    CHECK(std::fabs(std::sqrt(nx) - std::sqrt(nz)) <= 1e-9);
  }
}

TEST_CASE("mlp mixing keeps every weight matrix well conditioned") {
  GenConfig cfg;
  cfg.n = 8;
  cfg.mixing = MixingKind::kMlp;
  cfg.mixing_layers = 3;
  cfg.kappa_max = 25.0;
  Rng rng(33);
  const Mixing mixing = sample_mixing(cfg, rng);
  REQUIRE(mixing.net.w.size() == 3);
  for (const Tensor& w : mixing.net.w) {
    REQUIRE(w.rows() == cfg.n);
    REQUIRE(w.cols() == cfg.n);
    CHECK(cond2(w) <= cfg.kappa_max * (1.0 + 1e-9));
  }
}

TEST_CASE("dataset round-trips bitwise through a directory") {
  GenConfig cfg;
  cfg.n = 4;
  cfg.c = 3;
  cfg.t_len = 300;
  cfg.seed = 41;
  const Dataset ds = make_dataset(cfg);
  const std::filesystem::path dir = temp_dir("roundtrip");
  write_dataset(ds, dir.string());

  const Dataset back = read_dataset(dir.string());
  CHECK(back.x.values == ds.x.values);
  CHECK(back.z.values == ds.z.values);
  CHECK(back.c == ds.c);
  CHECK(back.a.values == ds.a.values);
  CHECK(back.meta.t_len == ds.meta.t_len);
  CHECK(back.meta.n == ds.meta.n);
  CHECK(back.meta.c == ds.meta.c);
  CHECK(back.meta.seed == ds.meta.seed);
  CHECK(back.meta.mixing_kind == ds.meta.mixing_kind);
  CHECK(back.meta.dyn_kind == ds.meta.dyn_kind);
  REQUIRE(back.dyn.nets.size() == ds.dyn.nets.size());
  for (std::size_t r = 0; r < ds.dyn.nets.size(); ++r) {
    REQUIRE(back.dyn.nets[r].w.size() == ds.dyn.nets[r].w.size());
    for (std::size_t l = 0; l < ds.dyn.nets[r].w.size(); ++l) {
      CHECK(back.dyn.nets[r].w[l].values == ds.dyn.nets[r].w[l].values);
      CHECK(back.dyn.nets[r].b[l].values == ds.dyn.nets[r].b[l].values);
    }
  }
  CHECK(back.dyn.sigma == ds.dyn.sigma);
  REQUIRE(back.mixing.net.w.size() == ds.mixing.net.w.size());
  for (std::size_t l = 0; l < ds.mixing.net.w.size(); ++l)
    CHECK(back.mixing.net.w[l].values == ds.mixing.net.w[l].values);
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupted observation payload fails the checksum") {
  GenConfig cfg;
  cfg.n = 3;
  cfg.c = 2;
  cfg.t_len = 200;
  cfg.seed = 42;
  const Dataset ds = make_dataset(cfg);
  const std::filesystem::path dir = temp_dir("corrupt");
  write_dataset(ds, dir.string());
  flip_byte(dir / "x.f64", 100);
  CHECK_THROWS_AS((void)read_dataset(dir.string()), ChecksumError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("missing latent file surfaces a structured io error") {
  GenConfig cfg;
  cfg.n = 3;
  cfg.c = 2;
  cfg.t_len = 200;
  cfg.seed = 43;
  const Dataset ds = make_dataset(cfg);
  const std::filesystem::path dir = temp_dir("missing");
  write_dataset(ds, dir.string());
  std::filesystem::remove(dir / "z.f64");
  CHECK_THROWS_AS((void)read_dataset(dir.string()), IoError);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
