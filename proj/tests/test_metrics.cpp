#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "nctrl/error.hpp"
#include "nctrl/metrics.hpp"
#include "nctrl/rng.hpp"
#include "nctrl/tensor.hpp"
#include "test_util.hpp"

using namespace nctrl;
using testutil::random_tensor;

namespace {

// Reference matching: try every permutation, keep the best total score.
double brute_force_best(const Tensor& score,
                        std::vector<std::size_t>* best_perm = nullptr) {
  const std::size_t n = score.rows();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1e300;
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += score.at(i, perm[i]);
    if (total > best) {
      best = total;
      if (best_perm) *best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Tensor column_permuted(const Tensor& z, const std::vector<std::size_t>& perm,
                       const std::vector<double>& scale) {
  Tensor out({z.rows(), z.cols()}, 0.0);
  for (std::size_t t = 0; t < z.rows(); ++t)
    for (std::size_t j = 0; j < z.cols(); ++j)
      out.at(t, perm[j]) = scale[j] * z.at(t, j);
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("pearson basics") {
  CHECK(pearson({1, 2, 3, 4}, {2, 4, 6, 8}) == doctest::Approx(1.0));
  CHECK(pearson({1, 2, 3, 4}, {8, 6, 4, 2}) == doctest::Approx(-1.0));
  CHECK(pearson({1, 2, 3, 4}, {5, 5, 5, 5}) == doctest::Approx(0.0));
}

TEST_CASE("rank_values handles ties with midranks") {
  const std::vector<double> r = rank_values({10.0, 20.0, 20.0, 5.0});
  REQUIRE(r.size() == 4);
  CHECK(r[0] == doctest::Approx(2.0));
  CHECK(r[1] == doctest::Approx(3.5));
  CHECK(r[2] == doctest::Approx(3.5));
  CHECK(r[3] == doctest::Approx(1.0));
}

TEST_CASE("mcc of identical factors is 1") {
  Rng rng(5);
  const Tensor z = random_tensor({200, 4}, rng);
  for (const CorrMode mode : {CorrMode::kPearson, CorrMode::kSpearman}) {
    const MccReport r = mcc(z, z, mode);
    CHECK(r.mcc == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.assignment[i] == i);
  }
}

TEST_CASE("mcc invariant to permutation and sign flips") {
  Rng rng(6);
  const Tensor z = random_tensor({300, 5}, rng);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  const std::vector<double> scale = {1.0, -1.0, 2.5, -0.3, 1.0};
  const Tensor zp = column_permuted(z, perm, scale);
  for (const CorrMode mode : {CorrMode::kPearson, CorrMode::kSpearman}) {
    const MccReport r = mcc(z, zp, mode);
    CHECK(std::fabs(r.mcc - 1.0) <= 1e-9);
    for (std::size_t i = 0; i < 5; ++i) CHECK(r.assignment[i] == perm[i]);
  }
}

TEST_CASE("spearman sees monotone transforms, pearson does not") {
  Rng rng(7);
  const Tensor z = random_tensor({400, 3}, rng);
  Tensor zc({400, 3}, 0.0);
  const std::vector<std::size_t> perm = {2, 0, 1};
  for (std::size_t t = 0; t < z.rows(); ++t)
    for (std::size_t j = 0; j < 3; ++j) {
      const double v = z.at(t, j);
      zc.at(t, perm[j]) = v * v * v;  // strictly monotone, non-linear
    }
  const MccReport rs = mcc(z, zc, CorrMode::kSpearman);
  CHECK(std::fabs(rs.mcc - 1.0) <= 1e-12);
  const MccReport rp = mcc(z, zc, CorrMode::kPearson);
  CHECK(rp.mcc < 1.0 - 1e-3);
}

TEST_CASE("assignment_max equals brute force on random scores") {
  Rng rng(8);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 2 + rng.below(6);  // 2..7
    const Tensor score = random_tensor({n, n}, rng, 0.0, 1.0);
    const std::vector<std::size_t> got = assignment_max(score);
    double got_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) got_total += score.at(i, got[i]);
    const double want = brute_force_best(score);
    CHECK(got_total == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("constant estimated column scores zero and is flagged") {
  Rng rng(9);
  Tensor z = random_tensor({100, 3}, rng);
  Tensor ze = z;
  for (std::size_t t = 0; t < ze.rows(); ++t) ze.at(t, 1) = 4.2;
  const MccReport r = mcc(z, ze, CorrMode::kSpearman);
  REQUIRE(r.constant_est.size() == 1);
  CHECK(r.constant_est[0] == 1);
  CHECK(r.constant_true.empty());
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.corr.at(i, 1) == 0.0);
  CHECK(r.mcc < 1.0);
}

TEST_CASE("mcc requires matching shapes") {
  Rng rng(10);
  const Tensor a = random_tensor({50, 3}, rng);
  const Tensor b = random_tensor({50, 4}, rng);
  CHECK_THROWS_AS((void)mcc(a, b, CorrMode::kSpearman), ShapeError);
  const Tensor c = random_tensor({49, 3}, rng);
  CHECK_THROWS_AS((void)mcc(a, c, CorrMode::kSpearman), ShapeError);
}

TEST_CASE("corr mode names round trip") {
  CHECK(corr_mode_from_name(corr_mode_name(CorrMode::kPearson)) ==
        CorrMode::kPearson);
  CHECK(corr_mode_from_name(corr_mode_name(CorrMode::kSpearman)) ==
        CorrMode::kSpearman);
  CHECK_THROWS_AS((void)corr_mode_from_name("kendall"), ValueError);
}

TEST_CASE("regime accuracy: frozen example with swap") {
  // est labels (1,1,1,0) vs true (0,0,1,1): identity scores 1/4, the swap
  // 0<->1 scores 3/4.
  const std::vector<std::uint32_t> c_true = {0, 0, 1, 1};
  const std::vector<std::uint32_t> c_est = {1, 1, 1, 0};
  const RegimeReport r = regime_accuracy(c_true, c_est, 2);
  CHECK(r.accuracy == doctest::Approx(0.75));
  CHECK(r.sigma[0] == 1);
  CHECK(r.sigma[1] == 0);
}

TEST_CASE("regime accuracy: relabeled sequence scores 1 and sigma inverts") {
  Rng rng(11);
  const std::size_t c = 4;
  const std::vector<std::uint32_t> relabel = {2, 0, 3, 1};
  std::vector<std::uint32_t> c_true(500), c_est(500);
  for (std::size_t t = 0; t < c_true.size(); ++t) {
    c_true[t] = static_cast<std::uint32_t>(rng.below(c));
    c_est[t] = relabel[c_true[t]];
  }
  const RegimeReport r = regime_accuracy(c_true, c_est, c);
  CHECK(r.accuracy == doctest::Approx(1.0));
  for (std::uint32_t k = 0; k < c; ++k) CHECK(r.sigma[relabel[k]] == k);
}

TEST_CASE("regime accuracy never below the identity relabeling") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 2 + rng.below(4);
    std::vector<std::uint32_t> c_true(200), c_est(200);
    for (std::size_t t = 0; t < c_true.size(); ++t) {
      c_true[t] = static_cast<std::uint32_t>(rng.below(c));
      c_est[t] = static_cast<std::uint32_t>(rng.below(c));
    }
    std::size_t same = 0;
    for (std::size_t t = 0; t < c_true.size(); ++t)
      same += c_true[t] == c_est[t];
    const RegimeReport r = regime_accuracy(c_true, c_est, c);
    CHECK(r.accuracy >= static_cast<double>(same) / c_true.size());
  }
}

TEST_CASE("regime accuracy rejects too many regimes for exhaustion") {
  const std::vector<std::uint32_t> v(10, 0);
  CHECK_THROWS_AS((void)regime_accuracy(v, v, 9), ValueError);
}

TEST_CASE("transition mse: conjugated matrix scores zero") {
  Rng rng(13);
  const std::size_t c = 3;
  // Random row-stochastic truth.
  Tensor a_true({c, c}, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      a_true.at(i, j) = rng.uniform(0.05, 1.0);
      row += a_true.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) a_true.at(i, j) /= row;
  }
  // Relabel map est->true and its conjugated estimate:
  // a_est[p][q] = a_true[sigma[p]][sigma[q]].
  const std::vector<std::uint32_t> sigma = {2, 0, 1};
  Tensor a_est({c, c}, 0.0);
  for (std::size_t p = 0; p < c; ++p)
    for (std::size_t q = 0; q < c; ++q)
      a_est.at(p, q) = a_true.at(sigma[p], sigma[q]);
  CHECK(transition_mse(a_true, a_est, sigma) ==
        doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("transition mse: uniform vs identity at C=2 is 0.25") {
  Tensor a_true({2, 2}, 0.0);
  a_true.at(0, 0) = 1.0;
  a_true.at(1, 1) = 1.0;
  const Tensor a_est({2, 2}, 0.5);
  const std::vector<std::uint32_t> sigma = {0, 1};
  CHECK(transition_mse(a_true, a_est, sigma) == doctest::Approx(0.25));
}

TEST_CASE("mcc matches a naive direct computation") {
  Rng rng(14);
  const Tensor zt = random_tensor({120, 3}, rng);
  const Tensor ze = random_tensor({120, 3}, rng);
  const MccReport r = mcc(zt, ze, CorrMode::kPearson);
  // Naive: all |pearson| pairs, brute-force match.
  Tensor score({3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      std::vector<double> a(120), b(120);
      for (std::size_t t = 0; t < 120; ++t) {
        a[t] = zt.at(t, i);
        b[t] = ze.at(t, j);
      }
      score.at(i, j) = std::fabs(pearson(a, b));
    }
  std::vector<std::size_t> perm;
  const double want = brute_force_best(score, &perm) / 3.0;
  CHECK(r.mcc == doctest::Approx(want).epsilon(1e-12));
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.assignment[i] == perm[i]);
}

}  // TEST_SUITE
