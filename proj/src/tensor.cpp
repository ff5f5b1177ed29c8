#include "nctrl/tensor.hpp"

#include <cmath>
#include <sstream>

#include "nctrl/error.hpp"

namespace nctrl {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> s, double fill)
    : shape(std::move(s)), values(shape_numel(shape), fill) {}

Tensor Tensor::scalar(double v) {
  Tensor t({1, 1});
  t.values[0] = v;
  return t;
}

Tensor Tensor::row(std::vector<double> v) {
  Tensor t;
  t.shape = {1, v.size()};
  t.values = std::move(v);
  return t;
}

Tensor Tensor::col(std::vector<double> v) {
  Tensor t;
  t.shape = {v.size(), 1};
  t.values = std::move(v);
  return t;
}

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::vector<double> v) {
  if (v.size() != r * c)
    throw ShapeError("matrix: " + std::to_string(v.size()) +
                     " values for shape " + shape_str({r, c}));
  Tensor t;
  t.shape = {r, c};
  t.values = std::move(v);
  return t;
}

std::size_t Tensor::numel() const { return values.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows: tensor has shape " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols: tensor has shape " + shape_str(shape));
  return shape[1];
}

double& Tensor::at(std::size_t i, std::size_t j) {
  return values[i * shape[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return values[i * shape[1] + j];
}

double* Tensor::row_ptr(std::size_t i) { return values.data() + i * shape[1]; }

const double* Tensor::row_ptr(std::size_t i) const {
  return values.data() + i * shape[1];
}

bool Tensor::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace nctrl
