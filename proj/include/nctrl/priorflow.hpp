#pragma once

#include <cstdint>
#include <vector>

#include "nctrl/nn.hpp"
#include "nctrl/rng.hpp"
#include "nctrl/tape.hpp"
#include "nctrl/tensor.hpp"

namespace nctrl {

// Componentwise inverse-transition prior.  Component i maps
//   eps_i = r_i(z_t[i], z_hist, theta_c) + skip_i * z_t[i]
// where r_i is a small MLP and theta_c an embedding of the active regime.
// The map (z_t -> eps) keeps a lower-triangular Jacobian whose diagonal is
// d eps_i / d z_t[i]; the log prior is the regime-conditional noise density
// of eps plus the log absolute diagonal.  The diagonal is computed exactly
// on the tape through a forward tangent pass, so it stays differentiable.
struct FlowSpec {
  std::size_t n = 8;        // latent dim
  std::size_t c = 5;        // regimes
  std::size_t lag = 1;      // history length
  std::size_t d_theta = 8;  // regime embedding width
  std::size_t hidden = 64;
  double slope = 0.2;
  double min_diag = 1e-12;
  double logvar_lo = -10.0, logvar_hi = 10.0;

  std::size_t in_dim() const { return 1 + n * lag + d_theta; }
  MlpSpec comp_spec() const {
    return MlpSpec{{in_dim(), hidden, hidden, 1}, Act::kLeakyRelu,
                   Act::kIdentity, slope};
  }
};

// Registers "flow.emb" [C x d_theta], "flow.logscale" [C x n] (log noise
// scales), and per component "flow.f<i>.w*/b*" plus "flow.f<i>.skip" [1 x 1]
// initialized to 1 so the diagonal starts away from zero.
void init_flow(ParamStore& store, const FlowSpec& spec, Rng& rng);

struct FlowNodes {
  NodeId eps = 0;            // [R x n]
  NodeId diag = 0;           // [R x n] signed d eps_i / d z_t[i]
  NodeId log_diag = 0;       // [R x n] log |diag|
  NodeId log_prob_rows = 0;  // [R x 1]
};

// Batched evaluation; rows are independent time steps.  c_idx selects the
// regime per row; when soft_gamma (a [R x C] weight table) is given, the
// embedding and noise log-variance are mixed by those weights instead.
FlowNodes flow_eval(Tape& t, const Bound& b, const FlowSpec& spec, NodeId z_t,
                    NodeId z_hist, const std::vector<std::uint32_t>& c_idx,
                    const Tensor* soft_gamma = nullptr);

// Scalar conveniences (each builds a one-row tape).
double prior_log_prob(const ParamStore& store, const FlowSpec& spec,
                      const std::vector<double>& z_t,
                      const std::vector<double>& z_hist, std::uint32_t c);

double diagonal_derivative(const ParamStore& store, const FlowSpec& spec,
                           const std::vector<double>& z_t,
                           const std::vector<double>& z_hist, std::uint32_t c,
                           std::size_t i);

// Plain eps evaluation (no tape), one row.
std::vector<double> flow_eps_plain(const ParamStore& store, const FlowSpec& spec,
                                   const std::vector<double>& z_t,
                                   const std::vector<double>& z_hist,
                                   std::uint32_t c);

}  // namespace nctrl
