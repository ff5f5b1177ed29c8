#include "nctrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nctrl/error.hpp"

namespace nctrl {

std::string corr_mode_name(CorrMode mode) {
  return mode == CorrMode::kPearson ? "pearson" : "spearman";
}

CorrMode corr_mode_from_name(const std::string& name) {
  if (name == "pearson") return CorrMode::kPearson;
  if (name == "spearman") return CorrMode::kSpearman;
  throw ValueError("unknown correlation mode '" + name +
                   "' (expected pearson or spearman)");
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ShapeError("correlation: series lengths differ");
  const std::size_t t = a.size();
  if (t == 0) throw ValueError("correlation: empty series");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(t);
  mb /= static_cast<double>(t);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> rank_values(const std::vector<double>& v) {
  const std::size_t t = v.size();
  std::vector<std::size_t> order(t);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&v](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(t, 0.0);
  std::size_t i = 0;
  while (i < t) {
    std::size_t j = i;
    while (j + 1 < t && v[order[j + 1]] == v[order[i]]) ++j;
    // midrank of the tied run [i, j], 1-based positions
    const double rank = 0.5 * (static_cast<double>(i + 1) +
                               static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::vector<std::size_t> assignment_max(const Tensor& score) {
  if (score.rank() != 2 || score.rows() != score.cols())
    throw ShapeError("assignment: square matrix required, got " +
                     shape_str(score.shape));
  const std::size_t n = score.rows();
  if (n == 0) throw ValueError("assignment: empty matrix");
  if (n > 64)
    throw ValueError("assignment: at most 64 rows supported, got " +
                     std::to_string(n));
  for (double v : score.values)
    if (!std::isfinite(v)) throw ValueError("assignment: non-finite score");

  // Shortest augmenting path on the negated scores (minimization form).
  const double kInf = std::numeric_limits<double>::infinity();
  auto cost = [&score](std::size_t r, std::size_t c) {
    return -score.at(r, c);
  };
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

MccReport mcc(const Tensor& z_true, const Tensor& z_est, CorrMode mode) {
  if (z_true.rank() != 2 || z_est.rank() != 2)
    throw ShapeError("mcc: matrices required");
  if (z_true.rows() != z_est.rows())
    throw ShapeError("mcc: row counts differ (" +
                     std::to_string(z_true.rows()) + " vs " +
                     std::to_string(z_est.rows()) + ")");
  if (z_true.cols() != z_est.cols())
    throw ShapeError("mcc: column counts differ (" +
                     std::to_string(z_true.cols()) + " vs " +
                     std::to_string(z_est.cols()) + ")");
  const std::size_t t = z_true.rows();
  const std::size_t n = z_true.cols();
  if (t < 3) throw ValueError("mcc: need at least 3 rows");

  auto column = [](const Tensor& m, std::size_t j) {
    std::vector<double> col(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) col[r] = m.at(r, j);
    return col;
  };
  auto is_constant = [](const std::vector<double>& col) {
    for (double v : col)
      if (v != col.front()) return false;
    return true;
  };

  MccReport report;
  report.mode = mode;
  std::vector<std::vector<double>> cols_true(n), cols_est(n);
  for (std::size_t j = 0; j < n; ++j) {
    cols_true[j] = column(z_true, j);
    cols_est[j] = column(z_est, j);
    if (is_constant(cols_true[j])) report.constant_true.push_back(j);
    if (is_constant(cols_est[j])) report.constant_est.push_back(j);
    if (mode == CorrMode::kSpearman) {
      cols_true[j] = rank_values(cols_true[j]);
      cols_est[j] = rank_values(cols_est[j]);
    }
  }

  report.corr = Tensor({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      report.corr.at(i, j) = std::fabs(pearson(cols_true[i], cols_est[j]));

  report.assignment = assignment_max(report.corr);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    total += report.corr.at(i, report.assignment[i]);
  report.mcc = total / static_cast<double>(n);
  return report;
}

RegimeReport regime_accuracy(const std::vector<std::uint32_t>& c_true,
                             const std::vector<std::uint32_t>& c_est,
                             std::size_t c) {
  if (c_true.size() != c_est.size())
    throw ShapeError("regime accuracy: label sequences differ in length");
  if (c_true.empty()) throw ValueError("regime accuracy: empty sequences");
  if (c == 0) throw ValueError("regime accuracy: need at least one regime");
  if (c > 8)
    throw ValueError(
        "regime accuracy: exhaustive relabeling search supports at most 8 "
        "regimes, got " +
        std::to_string(c) + "; use assignment-based matching instead");
  const std::size_t t = c_true.size();
  for (std::size_t i = 0; i < t; ++i)
    if (c_true[i] >= c || c_est[i] >= c)
      throw ValueError("regime accuracy: label out of range at step " +
                       std::to_string(i));

  // counts[e][k]: steps where the estimate says e and the truth says k.
  std::vector<std::vector<std::size_t>> counts(
      c, std::vector<std::size_t>(c, 0));
  for (std::size_t i = 0; i < t; ++i) ++counts[c_est[i]][c_true[i]];

  std::vector<std::uint32_t> perm(c);
  for (std::size_t i = 0; i < c; ++i) perm[i] = static_cast<std::uint32_t>(i);
  RegimeReport best;
  best.accuracy = -1.0;
  do {
    std::size_t hits = 0;
    for (std::size_t e = 0; e < c; ++e) hits += counts[e][perm[e]];
    const double acc = static_cast<double>(hits) / static_cast<double>(t);
    if (acc > best.accuracy) {
      best.accuracy = acc;
      best.sigma = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double transition_mse(const Tensor& a_true, const Tensor& a_est,
                      const std::vector<std::uint32_t>& sigma) {
  if (a_true.rank() != 2 || a_true.rows() != a_true.cols())
    throw ShapeError("transition mse: true matrix must be square");
  if (!a_true.same_shape(a_est))
    throw ShapeError("transition mse: matrix shapes differ (" +
                     shape_str(a_true.shape) + " vs " + shape_str(a_est.shape) +
                     ")");
  const std::size_t c = a_true.rows();
  if (sigma.size() != c)
    throw ShapeError("transition mse: relabeling has wrong length");
  // Invert the estimated->true relabeling so entry (i, j) of the true
  // matrix lines up with the matching estimated entry.
  std::vector<std::size_t> inv(c, c);
  for (std::size_t e = 0; e < c; ++e) {
    if (sigma[e] >= c) throw ValueError("transition mse: bad relabeling entry");
    if (inv[sigma[e]] != c)
      throw ValueError("transition mse: relabeling is not a bijection");
    inv[sigma[e]] = e;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double d = a_true.at(i, j) - a_est.at(inv[i], inv[j]);
      total += d * d;
    }
  }
  return total / static_cast<double>(c * c);
}

}  // namespace nctrl
