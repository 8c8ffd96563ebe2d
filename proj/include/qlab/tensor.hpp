#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace qlab {

int64_t shape_numel(const std::vector<int>& shape);

// Dense row-major float32 tensor. Rank is the shape length; most kernels work
// on rank 1 or 2. Element storage is a plain vector so tensors copy, move and
// compare without surprises.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  static Tensor from_data(std::vector<int> shape, std::vector<float> values);
  static Tensor scalar(float v);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  // Rank-2 accessors; throw ContractViolation on other ranks.
  int rows() const;
  int cols() const;
  float& operator()(int r, int c);
  float operator()(int r, int c) const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// Throws NumericFault naming `what` if any element is NaN or Inf.
void ensure_finite(std::span<const float> v, const std::string& what);
void ensure_finite(const Tensor& t, const std::string& what);

}  // namespace qlab
