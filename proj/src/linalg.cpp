#include "nctrl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nctrl/error.hpp"

namespace nctrl {

Tensor transpose(const Tensor& a) {
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul_plain: " + shape_str(a.shape) + " * " +
                     shape_str(b.shape));
  Tensor c({a.rows(), b.cols()}, 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row_ptr(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a.at(i, k);
      const double* bk = b.row_ptr(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

// Cyclic Jacobi sweeps; fine for the small symmetric matrices used here.
std::vector<double> sym_eigenvalues(Tensor s) {
  const std::size_t n = s.rows();
  if (s.cols() != n) throw ShapeError("sym_eigenvalues: " + shape_str(s.shape));
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += s.at(p, q) * s.at(p, q);
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = s.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double app = s.at(p, p), aqq = s.at(q, q);
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = s.at(k, p), akq = s.at(k, q);
          s.at(k, p) = c * akp - sn * akq;
          s.at(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = s.at(p, k), aqk = s.at(q, k);
          s.at(p, k) = c * apk - sn * aqk;
          s.at(q, k) = sn * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = s.at(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<double>());
  return ev;
}

std::vector<double> singular_values(const Tensor& a) {
  const Tensor at = transpose(a);
  // Gram matrix on the smaller side.
  const Tensor g = (a.rows() <= a.cols()) ? matmul_plain(a, at)
                                          : matmul_plain(at, a);
  std::vector<double> ev = sym_eigenvalues(g);
  for (double& v : ev) v = std::sqrt(std::max(v, 0.0));
  return ev;
}

double cond2(const Tensor& a) {
  const std::vector<double> sv = singular_values(a);
  const double smax = sv.front(), smin = sv.back();
  if (smin <= 0.0 || !std::isfinite(smax / smin))
    return std::numeric_limits<double>::infinity();
  return smax / smin;
}

double logabsdet_lu(Tensor a, bool* singular) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("logabsdet_lu: " + shape_str(a.shape));
  if (singular) *singular = false;
  double logdet = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::abs(a.at(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(a.at(i, k));
      if (v > best) {
        best = v;
        piv = i;
      }
    }
    if (best == 0.0) {
      if (singular) *singular = true;
      return -std::numeric_limits<double>::infinity();
    }
    if (piv != k)
      for (std::size_t j = 0; j < n; ++j)
        std::swap(a.at(k, j), a.at(piv, j));
    logdet += std::log(std::abs(a.at(k, k)));
    const double inv = 1.0 / a.at(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a.at(i, k) * inv;
      if (f == 0.0) continue;
      a.at(i, k) = f;
      for (std::size_t j = k + 1; j < n; ++j) a.at(i, j) -= f * a.at(k, j);
    }
  }
  return logdet;
}

std::size_t numeric_rank(const std::vector<double>& sv, double rel_tol) {
  if (sv.empty()) return 0;
  const double cutoff = rel_tol * sv.front();
  std::size_t r = 0;
  for (double v : sv)
    if (v > cutoff) ++r;
  return r;
}

// Modified Gram-Schmidt QR; returns Q with the diag(R) > 0 convention.
static Tensor gram_schmidt_q(Tensor a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor q({r, c}, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    std::vector<double> v(r);
    for (std::size_t i = 0; i < r; ++i) v[i] = a.at(i, j);
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < r; ++i) dot += q.at(i, k) * v[i];
      for (std::size_t i = 0; i < r; ++i) v[i] -= dot * q.at(i, k);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw ValueError("gram_schmidt_q: rank-deficient draw");
    for (std::size_t i = 0; i < r; ++i) q.at(i, j) = v[i] / norm;
  }
  return q;
}

Tensor random_orthogonal(std::size_t n, Rng& rng) {
  Tensor a({n, n});
  for (double& v : a.values) v = rng.normal();
  return gram_schmidt_q(std::move(a));
}

Tensor semi_orthogonal(std::size_t r, std::size_t c, Rng& rng) {
  if (r >= c) {
    Tensor a({r, c});
    for (double& v : a.values) v = rng.normal();
    return gram_schmidt_q(std::move(a));
  }
  Tensor a({c, r});
  for (double& v : a.values) v = rng.normal();
  return transpose(gram_schmidt_q(std::move(a)));
}

}  // namespace nctrl
