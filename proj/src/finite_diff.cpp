#include "qlab/finite_diff.hpp"

#include <cmath>

#include "qlab/error.hpp"

namespace qlab {

namespace {

double central_difference(const std::function<double(const std::vector<double>&)>& f,
                          std::vector<double>& w, size_t i, double eps) {
  double orig = w[i];
  w[i] = orig + eps;
  double up = f(w);
  w[i] = orig - eps;
  double down = f(w);
  w[i] = orig;
  if (!std::isfinite(up) || !std::isfinite(down)) {
    throw NumericFault("finite_difference_gradient: evaluator returned a non-finite value");
  }
  return (up - down) / (2.0 * eps);
}

}  // namespace

std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& params, double eps) {
  if (!(eps > 0.0)) throw ContractViolation("finite_difference_gradient: eps must be positive");
  if (!f) throw ContractViolation("finite_difference_gradient: missing evaluator");
  std::vector<double> w = params;
  std::vector<double> grad(params.size(), 0.0);
  for (size_t i = 0; i < params.size(); ++i) {
    grad[i] = central_difference(f, w, i, eps);
  }
  return grad;
}

std::vector<double> finite_difference_gradient_at(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& params, const std::vector<int64_t>& coords, double eps) {
  if (!(eps > 0.0)) throw ContractViolation("finite_difference_gradient: eps must be positive");
  if (!f) throw ContractViolation("finite_difference_gradient: missing evaluator");
  std::vector<double> w = params;
  std::vector<double> grad(coords.size(), 0.0);
  for (size_t c = 0; c < coords.size(); ++c) {
    int64_t i = coords[c];
    if (i < 0 || i >= static_cast<int64_t>(params.size())) {
      throw ContractViolation("finite_difference_gradient: coordinate out of range");
    }
    grad[c] = central_difference(f, w, static_cast<size_t>(i), eps);
  }
  return grad;
}

}  // namespace qlab
