#include "qlab/tensor.hpp"

#include <cmath>

#include "qlab/error.hpp"

namespace qlab {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ContractViolation("tensor shape dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> s)
    : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), 0.0f) {}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> values) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw ContractViolation("Tensor::from_data: element count does not match shape");
  }
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(values);
  return t;
}

Tensor Tensor::scalar(float v) { return from_data({1}, {v}); }

int Tensor::rows() const {
  if (rank() != 2) throw ContractViolation("rows(): tensor is not rank 2");
  return shape[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw ContractViolation("cols(): tensor is not rank 2");
  return shape[1];
}

float& Tensor::operator()(int r, int c) {
  return data[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)];
}

float Tensor::operator()(int r, int c) const {
  return data[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)];
}

void ensure_finite(std::span<const float> v, const std::string& what) {
  for (float x : v) {
    if (!std::isfinite(x)) throw NumericFault("non-finite value in " + what);
  }
}

void ensure_finite(const Tensor& t, const std::string& what) {
  ensure_finite(std::span<const float>(t.data), what);
}

}  // namespace qlab
