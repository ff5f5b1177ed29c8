#pragma once

#include <cstdint>
#include <vector>

#include "nctrl/hmm_kernel.hpp"
#include "nctrl/nn.hpp"
#include "nctrl/rng.hpp"
#include "nctrl/tape.hpp"
#include "nctrl/tensor.hpp"

namespace nctrl {

// Autoregressive hidden Markov model over observations: each regime c has a
// network x_{t-1} -> (mean, log-var) for the conditional emission density,
// plus a separate (mean, log-var) pair for the very first step.  Transition
// and initial distributions are kept as unnormalized logits.
struct ArhmmSpec {
  std::size_t m = 8;   // observation dim
  std::size_t c = 5;   // regimes
  std::size_t hidden = 64;
  double slope = 0.2;
  double logvar_lo = -10.0, logvar_hi = 10.0;
  double diag_logit_boost = 1.0;
  // Std-dev of the random per-regime offsets placed on the predicted-mean
  // output channels at init. All-zero nets would give every regime identical
  // responsibilities and the networks would then move in lockstep; distinct
  // random centers let the posterior split rows from the first pass.
  double init_mean_spread = 0.5;

  MlpSpec emission_spec() const {
    return MlpSpec{{m, hidden, hidden, 2 * m}, Act::kLeakyRelu, Act::kIdentity,
                   slope};
  }
};

// Parameters registered: "arhmm.logA" [C x C], "arhmm.logpi" [1 x C],
// "arhmm.em<r>.w*/b*", "arhmm.init_mean" [C x m], "arhmm.init_logvar" [C x m].
// Parameter-name prefix of regime r's emission network ("arhmm.em<r>").
inline std::string em_prefix(std::size_t r) {
  return "arhmm.em" + std::to_string(r);
}

void init_arhmm(ParamStore& store, const ArhmmSpec& spec, Rng& rng);

struct PosteriorMarginals {
  Tensor gamma;   // [T x C], rows sum to 1
  Tensor xi;      // [T-1 x C x C], each slice sums to 1
  double log_likelihood = 0.0;
};

// --- plain (tape-free) inference -----------------------------------------

// Normalized log pi / log A from the stored logits.
Tensor arhmm_log_init(const ParamStore& store);
Tensor arhmm_log_trans(const ParamStore& store);

// Full-sequence emission table [T x C]: row 0 from the initial-step
// parameters, rows t>=1 conditional on x_{t-1}.
Tensor emission_log_matrix(const ParamStore& store, const ArhmmSpec& spec,
                           const Tensor& x);

// Conditional-only table for an arbitrary row range: entry (i, c) is
// log p(x_cur[i] | x_prev[i], c).
Tensor emission_log_matrix_cond(const ParamStore& store, const ArhmmSpec& spec,
                                const Tensor& x_prev, const Tensor& x_cur);

PosteriorMarginals forward_backward(const ParamStore& store,
                                    const ArhmmSpec& spec, const Tensor& x);

std::vector<std::uint32_t> viterbi(const ParamStore& store,
                                   const ArhmmSpec& spec, const Tensor& x);

// --- differentiable losses ------------------------------------------------

// Normalized logits as tape nodes.
NodeId arhmm_log_init_node(Tape& t, const Bound& b);
NodeId arhmm_log_trans_node(Tape& t, const Bound& b);

// Emission tables as tape nodes (same semantics as the plain versions).
NodeId emission_log_matrix_node(Tape& t, const Bound& b, const ArhmmSpec& spec,
                                NodeId x_prev, NodeId x_cur);
NodeId initial_log_row_node(Tape& t, const Bound& b, const ArhmmSpec& spec,
                            NodeId x0);  // [1 x C]

// Exact negative log-likelihood of the full sequence (scalar node).
NodeId hmm_nll_full(Tape& t, const Bound& b, const ArhmmSpec& spec,
                    const Tensor& x);

// Windowed negative log-likelihood: x_win is [W+1 x m] whose first row is
// context; the chain restarts with a uniform state distribution.
NodeId hmm_nll_window(Tape& t, const Bound& b, const ArhmmSpec& spec,
                      const Tensor& x_win);

}  // namespace nctrl
