#include "nctrl/hmm_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nctrl/error.hpp"

namespace nctrl {

double logsumexp(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
  if (!std::isfinite(m)) return m;  // all -inf (or a NaN/inf slipped in)
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

static void check_fb_shapes(const Tensor& log_init, const Tensor& log_trans,
                            const Tensor& emit) {
  const std::size_t c = emit.cols();
  if (log_init.numel() != c)
    throw ShapeError("forward_backward: init " + shape_str(log_init.shape) +
                     " vs emit " + shape_str(emit.shape));
  if (log_trans.rank() != 2 || log_trans.rows() != c || log_trans.cols() != c)
    throw ShapeError("forward_backward: trans " + shape_str(log_trans.shape) +
                     " vs emit " + shape_str(emit.shape));
  if (emit.rows() == 0) throw ShapeError("forward_backward: empty sequence");
  for (std::size_t t = 0; t < emit.rows(); ++t)
    for (std::size_t j = 0; j < c; ++j)
      if (std::isnan(emit.at(t, j)))
        throw ValueError("forward_backward: NaN emission at t=" +
                         std::to_string(t) + " state=" + std::to_string(j));
}

FbResult forward_backward_kernel(const Tensor& log_init, const Tensor& log_trans,
                                 const Tensor& emit, bool want_xi_full) {
  check_fb_shapes(log_init, log_trans, emit);
  const std::size_t t_len = emit.rows(), c = emit.cols();

  Tensor alpha({t_len, c}), beta({t_len, c});
  std::vector<double> work(c);

  for (std::size_t j = 0; j < c; ++j)
    alpha.at(0, j) = log_init.values[j] + emit.at(0, j);
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t k = 0; k < c; ++k)
        work[k] = alpha.at(t - 1, k) + log_trans.at(k, j);
      alpha.at(t, j) = logsumexp(work.data(), c) + emit.at(t, j);
    }
  }
  const double loglik = logsumexp(alpha.row_ptr(t_len - 1), c);

  for (std::size_t j = 0; j < c; ++j) beta.at(t_len - 1, j) = 0.0;
  for (std::size_t t = t_len - 1; t-- > 0;) {
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t k = 0; k < c; ++k)
        work[k] = log_trans.at(j, k) + emit.at(t + 1, k) + beta.at(t + 1, k);
      beta.at(t, j) = logsumexp(work.data(), c);
    }
  }

  FbResult r;
  r.log_likelihood = loglik;
  r.gamma = Tensor({t_len, c});
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t j = 0; j < c; ++j)
      r.gamma.at(t, j) = std::exp(alpha.at(t, j) + beta.at(t, j) - loglik);

  r.xi_sum = Tensor({c, c}, 0.0);
  if (want_xi_full) r.xi = Tensor({t_len > 0 ? t_len - 1 : 0, c, c});
  for (std::size_t t = 0; t + 1 < t_len; ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      const double aj = alpha.at(t, j);
      for (std::size_t k = 0; k < c; ++k) {
        const double v = std::exp(aj + log_trans.at(j, k) + emit.at(t + 1, k) +
                                  beta.at(t + 1, k) - loglik);
        r.xi_sum.at(j, k) += v;
        if (want_xi_full) r.xi.values[(t * c + j) * c + k] = v;
      }
    }
  }
  return r;
}

std::vector<std::uint32_t> viterbi_kernel(const Tensor& log_init,
                                          const Tensor& log_trans,
                                          const Tensor& emit) {
  check_fb_shapes(log_init, log_trans, emit);
  const std::size_t t_len = emit.rows(), c = emit.cols();

  Tensor delta({t_len, c});
  std::vector<std::uint32_t> back((t_len > 1 ? t_len - 1 : 0) * c, 0);

  for (std::size_t j = 0; j < c; ++j)
    delta.at(0, j) = log_init.values[j] + emit.at(0, j);
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      double best = delta.at(t - 1, 0) + log_trans.at(0, j);
      std::uint32_t arg = 0;
      for (std::size_t k = 1; k < c; ++k) {
        const double v = delta.at(t - 1, k) + log_trans.at(k, j);
        if (v > best) {  // strict: keeps the smallest index on ties
          best = v;
          arg = static_cast<std::uint32_t>(k);
        }
      }
      delta.at(t, j) = best + emit.at(t, j);
      back[(t - 1) * c + j] = arg;
    }
  }

  std::vector<std::uint32_t> path(t_len, 0);
  double best = delta.at(t_len - 1, 0);
  for (std::size_t j = 1; j < c; ++j)
    if (delta.at(t_len - 1, j) > best) {
      best = delta.at(t_len - 1, j);
      path[t_len - 1] = static_cast<std::uint32_t>(j);
    }
  for (std::size_t t = t_len - 1; t-- > 0;)
    path[t] = back[t * c + path[t + 1]];
  return path;
}

}  // namespace nctrl
