#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nctrl/tensor.hpp"

namespace nctrl {

enum class CorrMode { kPearson, kSpearman };

std::string corr_mode_name(CorrMode mode);
CorrMode corr_mode_from_name(const std::string& name);

// Component-recovery score: absolute correlation matrix between true and
// estimated factor columns, best one-to-one matching, mean matched value.
struct MccReport {
  double mcc = 0.0;
  Tensor corr;                            // [n x n] |corr|, row=true, col=est
  std::vector<std::size_t> assignment;    // true column i -> matched est column
  CorrMode mode = CorrMode::kSpearman;
  // Columns with zero variance; their correlations are defined as 0.
  std::vector<std::size_t> constant_true;
  std::vector<std::size_t> constant_est;
};

// Pearson correlation of two equal-length series; 0 when either side is
// constant (the caller decides whether to surface that as a warning).
double pearson(const std::vector<double>& a, const std::vector<double>& b);

// Tie-averaged ranks (1-based midranks).
std::vector<double> rank_values(const std::vector<double>& v);

// Maximum-total-score one-to-one matching via the O(n^3) shortest
// augmenting path method; returns, per row, the assigned column.
// Supports n <= 64.
std::vector<std::size_t> assignment_max(const Tensor& score);

MccReport mcc(const Tensor& z_true, const Tensor& z_est, CorrMode mode);

// Regime-label recovery under the best relabeling.
struct RegimeReport {
  double accuracy = 0.0;
  std::vector<std::uint32_t> sigma;  // estimated label -> true label
  double a_mse = 0.0;                // filled by transition_mse
};

// Exhaustive search over all C! relabelings (C <= 8): accuracy is the best
// mean over t of [sigma(c_est_t) == c_true_t].
RegimeReport regime_accuracy(const std::vector<std::uint32_t>& c_true,
                             const std::vector<std::uint32_t>& c_est,
                             std::size_t c);

// Mean over all C^2 entries of the squared gap between the true transition
// matrix and the estimated one with its labels aligned through `sigma`
// (the estimated->true relabeling produced by regime_accuracy).
double transition_mse(const Tensor& a_true, const Tensor& a_est,
                      const std::vector<std::uint32_t>& sigma);

}  // namespace nctrl
