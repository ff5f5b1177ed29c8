#pragma once

#include <cstdint>
#include <vector>

#include "nctrl/tensor.hpp"

namespace nctrl {

// Result of log-space forward-backward over a T x C table of per-step
// log-potentials.  All inputs are treated as free log-potentials: the
// routine never normalizes them, so gradients of the log-likelihood with
// respect to unnormalized entries are exactly the posterior expected counts.
struct FbResult {
  double log_likelihood = 0.0;
  Tensor gamma;    // [T x C]   smoothed state marginals
  Tensor xi_sum;   // [C x C]   sum over t of pairwise transition posteriors
  Tensor xi;       // [T-1 x C x C] pairwise posteriors (only if requested)
};

// log_init: [1 x C] (or C values), log_trans: [C x C], emit: [T x C].
FbResult forward_backward_kernel(const Tensor& log_init, const Tensor& log_trans,
                                 const Tensor& emit, bool want_xi_full);

// Most probable state path; ties broken toward the smaller state index.
std::vector<std::uint32_t> viterbi_kernel(const Tensor& log_init,
                                          const Tensor& log_trans,
                                          const Tensor& emit);

// Overflow-safe log(sum(exp(x))) over a contiguous range.
double logsumexp(const double* x, std::size_t n);

}  // namespace nctrl
