#pragma once

#include <cstddef>
#include <vector>

#include "nctrl/rng.hpp"
#include "nctrl/tensor.hpp"

namespace nctrl {

// Eigenvalues of a symmetric matrix (cyclic Jacobi), descending order.
std::vector<double> sym_eigenvalues(Tensor s);

// Singular values of an arbitrary matrix, descending, each >= 0.
// Computed from the Gram matrix of the smaller side.
std::vector<double> singular_values(const Tensor& a);

// Spectral condition number sigma_max / sigma_min (inf when singular).
double cond2(const Tensor& a);

// log |det A| through LU with partial pivoting.  Sets *singular when the
// matrix is numerically singular (result is -inf in that case).
double logabsdet_lu(Tensor a, bool* singular = nullptr);

// Numerical rank: number of singular values > rel_tol * max(singular values).
std::size_t numeric_rank(const std::vector<double>& sv, double rel_tol);

// Haar-like random orthogonal matrix via QR of a Gaussian matrix with the
// sign convention diag(R) > 0.
Tensor random_orthogonal(std::size_t n, Rng& rng);

// Random r x c matrix with orthonormal columns (r >= c) or orthonormal rows
// (r < c); spectral norm is exactly 1.
Tensor semi_orthogonal(std::size_t r, std::size_t c, Rng& rng);

Tensor transpose(const Tensor& a);
Tensor matmul_plain(const Tensor& a, const Tensor& b);

}  // namespace nctrl
