#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace nctrl {

// Dense row-major float64 tensor.  Rank is arbitrary but almost all of the
// library works with rank-2 (matrices) and treats a 1x1 tensor as a scalar.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, double fill = 0.0);

  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);                       // [1 x k]
  static Tensor col(std::vector<double> v);                       // [k x 1]
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v);

  std::size_t numel() const;
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return numel() == 1; }

  // Rank-2 accessors; throw ShapeError when the tensor is not a matrix.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double* row_ptr(std::size_t i);
  const double* row_ptr(std::size_t i) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
  bool empty() const { return values.empty(); }
};

std::string shape_str(const std::vector<std::size_t>& shape);
std::size_t shape_numel(const std::vector<std::size_t>& shape);

}  // namespace nctrl
