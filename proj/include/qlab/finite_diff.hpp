#pragma once

#include <functional>
#include <vector>

namespace qlab {

// Central-difference gradient (f(w + eps e_i) - f(w - eps e_i)) / (2 eps),
// evaluated one coordinate at a time over a double-precision parameter copy.
// The evaluator must be deterministic; eps must be positive. Used as the
// independent reference the analytic backward pass is checked against.
std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& params, double eps);

// Same scheme restricted to a subset of coordinates; entries of `coords`
// index into `params`. Returns one derivative per requested coordinate.
std::vector<double> finite_difference_gradient_at(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& params, const std::vector<int64_t>& coords, double eps);

}  // namespace qlab
