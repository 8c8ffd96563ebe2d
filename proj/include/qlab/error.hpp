#pragma once

#include <stdexcept>
#include <string>

namespace qlab {

// API misuse: bad shapes, invalid arguments, out-of-range indices.
struct ContractViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN or Inf escaping a kernel, a gradient, or a decomposition.
struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unsupported or inconsistent configuration values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structurally valid input that carries no usable signal, e.g. an all-zero
// tensor handed to scale calibration or radial profiles that never plateau.
struct DegenerateInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corpus ingestion and checkpoint integrity problems.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Optimization blow-ups: divergence, or every candidate learning rate failed.
struct TrainingFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace qlab
