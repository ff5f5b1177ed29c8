#pragma once

#include <cstddef>
#include <vector>

#include "nctrl/nn.hpp"
#include "nctrl/rng.hpp"
#include "nctrl/tape.hpp"
#include "nctrl/tensor.hpp"

namespace nctrl {

// Per-step encoder/decoder pair.  The encoder maps each observation row to
// the mean and log-variance of a diagonal-Gaussian posterior over latents;
// the decoder maps latent rows back to observation space.  Temporal
// structure enters only through the latent prior, never through the
// encoder, so rows of a batch are independent given the parameters.
struct VaeSpec {
  std::size_t m = 8;  // observation dim
  std::size_t n = 8;  // latent dim
  std::size_t hidden = 128;
  double slope = 0.2;
  double logvar_lo = -10.0;
  double logvar_hi = 10.0;

  MlpSpec encoder_spec() const {
    return MlpSpec{{m, hidden, hidden, hidden, 2 * n},
                   Act::kLeakyRelu,
                   Act::kIdentity,
                   slope};
  }
  MlpSpec decoder_spec() const {
    return MlpSpec{{n, hidden, hidden, m}, Act::kLeakyRelu, Act::kIdentity,
                   slope};
  }
};

// Registers "vae.enc.*" and "vae.dec.*" parameters.
void init_vae(ParamStore& store, const VaeSpec& spec, Rng& rng);

struct EncodeNodes {
  NodeId mean = 0;     // [R x n]
  NodeId log_var = 0;  // [R x n], clamped
};

// Posterior parameters for a batch of observation rows x: [R x m].
EncodeNodes encode_node(Tape& t, const Bound& bound, const VaeSpec& spec,
                        NodeId x);

// mean + exp(0.5 log_var) .* u with u a constant [R x n] standard-normal
// draw; gradients flow to mean and log_var only.
NodeId reparameterize_node(Tape& t, NodeId mean, NodeId log_var,
                           const Tensor& u);

// Decoder forward for latent rows z: [R x n] -> [R x m].
NodeId decode_node(Tape& t, const Bound& bound, const VaeSpec& spec, NodeId z);

// Mean over rows and columns of (x_hat - x)^2.
NodeId recon_loss_node(Tape& t, NodeId x_hat, NodeId x);

// log q(z | x) of the diagonal-Gaussian posterior, per row -> [R x 1].
NodeId posterior_log_density_rows(Tape& t, NodeId z, NodeId mean,
                                  NodeId log_var);

// Tape-free single-batch helpers for evaluation paths.
void vae_encode_plain(const ParamStore& store, const VaeSpec& spec,
                      const Tensor& x, Tensor& mean, Tensor& log_var);
Tensor vae_decode_plain(const ParamStore& store, const VaeSpec& spec,
                        const Tensor& z);

}  // namespace nctrl
