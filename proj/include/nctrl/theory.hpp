#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nctrl/datagen.hpp"
#include "nctrl/tensor.hpp"

namespace nctrl {

// Numerical verification of the identifiability preconditions on the
// ground-truth generator, where the conditional latent densities are
// closed-form Gaussians.

// Conditional log-density of one latent coordinate:
// log N(z_t[k]; f_c(z_hist)[k], sigma_c^2).
double eta(const GroundTruthDynamics& dyn, std::size_t k,
           const std::vector<double>& z_t, const std::vector<double>& z_hist,
           std::uint32_t c);

// Variability condition at one evaluation point.  For each latent
// coordinate k, two vectors of length n*C + (C-1) are stacked:
//  - one from the mixed second derivatives d^2 eta / d z_t[k] d z_hist[l]
//    over every regime, followed by the C-1 consecutive-regime differences
//    of d^2 eta / d z_t[k]^2;
//  - one from the third derivatives d^3 eta / d z_t[k]^2 d z_hist[l],
//    followed by the differences of d eta / d z_t[k].
// The condition holds when the 2n rows are linearly independent.
struct VariabilityReport {
  std::vector<double> z_t;
  std::vector<double> z_hist;
  Tensor vectors;                       // [2n x (n*C + C - 1)]
  std::vector<double> singular_values;  // descending
  std::size_t rank = 0;                 // at rel. tolerance 1e-6
  bool pass = false;                    // rank == 2n
  // With history-independent noise scale, the third-derivative blocks are
  // identically zero; this flag records that the computed blocks stayed
  // below the stencil's noise floor, in which case they are zeroed before
  // the rank computation (stencil noise must not masquerade as rank).
  bool third_blocks_zero = false;
};

// Derivatives are central finite differences of eta (base step 1e-3) with
// one Richardson refinement.  Requires lag == 1.  The step is exposed for
// stencil-convergence tests only.
VariabilityReport variability_vectors(const GroundTruthDynamics& dyn,
                                      const std::vector<double>& z_t,
                                      const std::vector<double>& z_hist,
                                      double step = 1e-3);

struct VariabilitySummary {
  std::vector<VariabilityReport> reports;
  std::size_t pass_count = 0;
  bool pass = false;  // true when at least one sampled point has full rank
};

// Evaluates the condition at `points` standard-normal draws of (z_t, z_hist).
VariabilitySummary check_variability(const GroundTruthDynamics& dyn,
                                     std::size_t points, std::uint64_t seed);

// Volume preservation of the observation map: at each sampled latent point
// the Jacobian is formed by central finite differences (step 1e-5) and
// |log|det|| is reported; the map preserves volume when the maximum
// deviation stays within 1e-6.
struct VolumeReport {
  std::vector<std::vector<double>> points;
  std::vector<double> log_abs_det;  // per point; -inf when singular
  std::vector<bool> singular;
  double max_abs_log_det = 0.0;
  bool pass = false;
};

VolumeReport check_volume(const Mixing& mixing, std::size_t sample_count,
                          std::uint64_t seed);

}  // namespace nctrl
