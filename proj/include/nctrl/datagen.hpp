#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nctrl/nn.hpp"
#include "nctrl/rng.hpp"
#include "nctrl/tensor.hpp"

namespace nctrl {

// Discrete regime chain: row-stochastic transition matrix plus initial
// distribution.
struct MarkovChainParams {
  Tensor a;    // [C x C]
  Tensor pi0;  // [1 x C]
};

void validate_markov_chain(const MarkovChainParams& p, double tol = 1e-12);

// Per-regime latent transition functions z_t = f_c(z_{t-L..t-1}) + sigma_c * eps.
struct GroundTruthDynamics {
  std::size_t n = 0;    // latent dimension
  std::size_t lag = 1;  // history length L
  std::string kind;     // "mlp" | "linear"
  std::vector<MlpParams> nets;   // one per regime, (n*lag) -> n
  std::vector<double> sigma;     // per-regime noise scale
  std::size_t regimes() const { return nets.size(); }
};

enum class MixingKind { kOrthogonal, kMlp };

struct MixingSpec {
  MixingKind kind = MixingKind::kMlp;
  std::size_t layers = 2;      // weight matrices for the mlp kind
  double kappa_max = 25.0;     // per-matrix spectral condition bound
  double slope = 0.2;
};

// Invertible observation map x = g(z) with m == n.  The orthogonal kind is
// a single square isometry; the mlp kind interleaves condition-filtered
// square matrices with LeakyReLU (none after the last layer), which keeps
// the map bijective but not volume preserving.
struct Mixing {
  MixingSpec spec;
  MlpParams net;
};

struct GenConfig {
  std::size_t n = 8;
  std::size_t c = 5;
  std::size_t t_len = 20000;
  std::size_t lag = 1;
  std::uint64_t seed = 0;
  MixingKind mixing = MixingKind::kMlp;
  std::size_t mixing_layers = 2;
  double kappa_max = 25.0;
  double slope = 0.2;
  std::string dyn_kind = "mlp";  // "mlp" (two layers, hidden 16) | "linear"
  std::size_t dyn_hidden = 16;
  double sigma = 0.1;
  double diag_boost = 0.5;       // added to transition-matrix diagonal
};

struct DatasetMeta {
  std::size_t format_version = 1;
  std::size_t t_len = 0, n = 0, m = 0, c = 0, lag = 1;
  std::uint64_t seed = 0;
  std::string mixing_kind;
  std::size_t mixing_layers = 0;
  std::string dyn_kind;
  std::vector<double> sigma;
};

struct Dataset {
  DatasetMeta meta;
  Tensor x;                       // [T x m] observations
  Tensor z;                       // [T x n] ground-truth latents
  std::vector<std::uint32_t> c;   // [T] regime labels
  Tensor a;                       // [C x C] true transition matrix
  Mixing mixing;
  GroundTruthDynamics dyn;
};

// Dirichlet(1) rows with a diagonal boost, renormalized; uniform pi0.
MarkovChainParams sample_regime_chain(std::size_t c, double diag_boost, Rng& rng);

std::vector<std::uint32_t> sample_markov_chain(const MarkovChainParams& p,
                                               std::size_t t_len, Rng& rng);

// Per-regime transition networks.  Weight matrices are drawn semi-orthogonal
// (spectral norm 1) so rollouts stay bounded; hidden biases break symmetry
// between regimes.  The "linear" kind uses one identity-activation layer
// with a 0.7-scaled orthogonal matrix per regime.
GroundTruthDynamics sample_dynamics(const GenConfig& cfg, Rng& rng);

// Rollout.  Rows 0..lag-1 of z are standard-normal burn-in (excluded from
// training windows); eps holds the raw standard-normal draws, so for
// t >= lag:  z[t] = f_c(hist) + sigma_c * eps[t].
void roll_latents(const GroundTruthDynamics& dyn,
                  const std::vector<std::uint32_t>& c, Rng& rng, Tensor* z,
                  Tensor* eps);

Mixing sample_mixing(const GenConfig& cfg, Rng& rng);

Tensor mix(const Mixing& mixing, const Tensor& z);

Dataset make_dataset(const GenConfig& cfg);

// Directory layout: meta.json, x.f64, z.f64, c.u32, A.f64, mixing.ckpt,
// dynamics.ckpt (raw little-endian arrays; meta.json stores per-file CRC32).
void write_dataset(const Dataset& ds, const std::string& dir, bool csv = false);
Dataset read_dataset(const std::string& dir);

}  // namespace nctrl
