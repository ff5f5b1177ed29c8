#include "nctrl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nctrl/error.hpp"
#include "nctrl/linalg.hpp"
#include "nctrl/rng.hpp"

namespace nctrl {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

double eta_scalar(const GroundTruthDynamics& dyn, std::size_t k, double z_k,
                  const std::vector<double>& z_hist, std::uint32_t c) {
  const std::vector<double> mean = mlp_apply(dyn.nets[c], z_hist.data());
  const double sigma = dyn.sigma[c];
  const double d = (z_k - mean[k]) / sigma;
  return -kHalfLog2Pi - std::log(sigma) - 0.5 * d * d;
}

// One Richardson refinement of a second-order stencil evaluated at steps
// h and h/2: error O(h^2) cancels, leaving O(h^4).
template <typename F>
double richardson(F stencil, double h) {
  return (4.0 * stencil(0.5 * h) - stencil(h)) / 3.0;
}

struct EtaDerivs {
  const GroundTruthDynamics& dyn;
  std::size_t k;
  double z_k;
  std::vector<double> hist;  // scratch copy, mutated around the base point
  const std::vector<double>& base_hist;
  std::uint32_t c;
  double eta_abs_max = 0.0;  // scale of the evaluated values, for noise bounds

  double track(double v) {
    eta_abs_max = std::max(eta_abs_max, std::fabs(v));
    return v;
  }
  double eta_at(double zk, std::size_t l, double dl) {
    hist = base_hist;
    hist[l] += dl;
    return track(eta_scalar(dyn, k, zk, hist, c));
  }
  double eta_zk(double zk) {
    return track(eta_scalar(dyn, k, zk, base_hist, c));
  }

  // d^2 eta / d z_k d hist_l
  double mixed2(std::size_t l, double h) {
    return richardson(
        [this, l](double s) {
          return (eta_at(z_k + s, l, s) - eta_at(z_k + s, l, -s) -
                  eta_at(z_k - s, l, s) + eta_at(z_k - s, l, -s)) /
                 (4.0 * s * s);
        },
        h);
  }

  // d^3 eta / d z_k^2 d hist_l
  double third(std::size_t l, double h) {
    return richardson(
        [this, l](double s) {
          auto second_in_zk = [this, l, s](double dl) {
            return (eta_at(z_k + s, l, dl) - 2.0 * eta_at(z_k, l, dl) +
                    eta_at(z_k - s, l, dl)) /
                   (s * s);
          };
          return (second_in_zk(s) - second_in_zk(-s)) / (2.0 * s);
        },
        h);
  }

  // d^2 eta / d z_k^2
  double second_self(double h) {
    return richardson(
        [this](double s) {
          return (eta_zk(z_k + s) - 2.0 * eta_zk(z_k) + eta_zk(z_k - s)) /
                 (s * s);
        },
        h);
  }

  // d eta / d z_k
  double first_self(double h) {
    return richardson(
        [this](double s) {
          return (eta_zk(z_k + s) - eta_zk(z_k - s)) / (2.0 * s);
        },
        h);
  }
};

void require_finite(double v, std::size_t k, std::size_t l, std::uint32_t c,
                    const char* what) {
  if (!std::isfinite(v))
    throw ValueError(std::string("variability check: non-finite ") + what +
                     " at k=" + std::to_string(k) + " l=" + std::to_string(l) +
                     " regime=" + std::to_string(c));
}

}  // namespace

double eta(const GroundTruthDynamics& dyn, std::size_t k,
           const std::vector<double>& z_t, const std::vector<double>& z_hist,
           std::uint32_t c) {
  if (k >= dyn.n) throw ValueError("eta: component index out of range");
  if (c >= dyn.regimes()) throw ValueError("eta: regime index out of range");
  if (z_t.size() != dyn.n || z_hist.size() != dyn.n * dyn.lag)
    throw ShapeError("eta: bad input sizes");
  if (dyn.sigma[c] <= 0.0) throw ValueError("eta: non-positive noise scale");
  return eta_scalar(dyn, k, z_t[k], z_hist, c);
}

VariabilityReport variability_vectors(const GroundTruthDynamics& dyn,
                                      const std::vector<double>& z_t,
                                      const std::vector<double>& z_hist,
                                      double step) {
  if (dyn.lag != 1)
    throw ValueError(
        "variability check: defined over one-step histories (lag 1), got lag " +
        std::to_string(dyn.lag));
  const std::size_t n = dyn.n;
  const std::size_t regimes = dyn.regimes();
  if (z_t.size() != n || z_hist.size() != n)
    throw ShapeError("variability check: bad input sizes");
  if (regimes == 0) throw ValueError("variability check: no regimes");
  if (!(step > 0.0)) throw ValueError("variability check: step must be > 0");

  const double h = step;
  const std::size_t width = n * regimes + (regimes - 1);

  VariabilityReport report;
  report.z_t = z_t;
  report.z_hist = z_hist;
  report.vectors = Tensor({2 * n, width}, 0.0);

  double third_max = 0.0;
  double mixed_max = 0.0;
  double eta_scale = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    // Per-regime self-derivative values, needed for the difference entries.
    std::vector<double> second_self(regimes), first_self(regimes);
    for (std::uint32_t c = 0; c < regimes; ++c) {
      EtaDerivs d{dyn, k, z_t[k], {}, z_hist, c};
      for (std::size_t l = 0; l < n; ++l) {
        const double m2 = d.mixed2(l, h);
        require_finite(m2, k, l, c, "mixed second derivative");
        report.vectors.at(k, c * n + l) = m2;
        mixed_max = std::max(mixed_max, std::fabs(m2));
        const double t3 = d.third(l, h);
        require_finite(t3, k, l, c, "third derivative");
        report.vectors.at(n + k, c * n + l) = t3;
        third_max = std::max(third_max, std::fabs(t3));
      }
      second_self[c] = d.second_self(h);
      require_finite(second_self[c], k, k, c, "second self-derivative");
      first_self[c] = d.first_self(h);
      require_finite(first_self[c], k, k, c, "first self-derivative");
      eta_scale = std::max(eta_scale, d.eta_abs_max);
    }
    for (std::size_t c = 0; c + 1 < regimes; ++c) {
      report.vectors.at(k, n * regimes + c) =
          second_self[c + 1] - second_self[c];
      report.vectors.at(n + k, n * regimes + c) =
          first_self[c + 1] - first_self[c];
    }
  }

  // The third-derivative stencil differences two second-differences that
  // agree exactly when the noise scale is history-independent (the true
  // third derivative is identically 0), so the computed block is pure
  // cancellation noise: bounded by ~100 * eps * |eta| / h^3 after the
  // Richardson combination.  Blocks below that bound (plus a small scale-
  // relative floor) are treated as structural zeros; otherwise stencil
  // noise would masquerade as matrix rank.  A genuinely history-dependent
  // noise scale yields third derivatives on the same scale as the mixed
  // second derivatives, orders of magnitude above this floor.
  const double eps = std::numeric_limits<double>::epsilon();
  const double noise_floor =
      std::max(128.0 * eps * std::max(1.0, eta_scale) / (h * h * h),
               1e-6 * std::max(1.0, mixed_max));
  report.third_blocks_zero = third_max <= noise_floor;
  if (report.third_blocks_zero)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n * regimes; ++j)
        report.vectors.at(n + k, j) = 0.0;
  report.singular_values = singular_values(report.vectors);
  report.rank = numeric_rank(report.singular_values, 1e-6);
  report.pass = report.rank == 2 * n;
  return report;
}

VariabilitySummary check_variability(const GroundTruthDynamics& dyn,
                                     std::size_t points, std::uint64_t seed) {
  if (points == 0) throw ValueError("variability check: need points >= 1");
  Rng rng(seed);
  VariabilitySummary summary;
  for (std::size_t p = 0; p < points; ++p) {
    std::vector<double> z_t(dyn.n), z_hist(dyn.n * dyn.lag);
    for (double& v : z_t) v = rng.normal();
    for (double& v : z_hist) v = rng.normal();
    summary.reports.push_back(variability_vectors(dyn, z_t, z_hist));
    if (summary.reports.back().pass) ++summary.pass_count;
  }
  summary.pass = summary.pass_count > 0;
  return summary;
}

VolumeReport check_volume(const Mixing& mixing, std::size_t sample_count,
                          std::uint64_t seed) {
  if (sample_count == 0) throw ValueError("volume check: need points >= 1");
  const std::size_t n = mixing.net.in_dim();
  if (mixing.net.out_dim() != n)
    throw ShapeError("volume check: map must be square");

  const double h = 1e-5;
  Rng rng(seed);
  VolumeReport report;
  for (std::size_t p = 0; p < sample_count; ++p) {
    std::vector<double> z(n);
    for (double& v : z) v = rng.normal();

    // Batch of 2n perturbed rows: +h e_j then -h e_j per coordinate.
    Tensor probe({2 * n, n}, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        probe.at(2 * j, i) = z[i];
        probe.at(2 * j + 1, i) = z[i];
      }
      probe.at(2 * j, j) += h;
      probe.at(2 * j + 1, j) -= h;
    }
    const Tensor images = mlp_apply_batch(mixing.net, probe);

    Tensor jac({n, n}, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i)
        jac.at(i, j) =
            (images.at(2 * j, i) - images.at(2 * j + 1, i)) / (2.0 * h);

    bool singular = false;
    const double logdet = logabsdet_lu(jac, &singular);
    report.points.push_back(z);
    report.log_abs_det.push_back(logdet);
    report.singular.push_back(singular);
    if (singular)
      report.max_abs_log_det =
          std::numeric_limits<double>::infinity();
    else
      report.max_abs_log_det =
          std::max(report.max_abs_log_det, std::fabs(logdet));
  }
  report.pass = report.max_abs_log_det <= 1e-6;
  return report;
}

}  // namespace nctrl
