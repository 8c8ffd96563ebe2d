#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qlab/dataset.hpp"
#include "qlab/model.hpp"

namespace qlab {

// Random direction of unit L2 norm in the quantized coordinate space.
struct Direction {
  uint64_t seed = 0;
  std::vector<float> unit;
};
Direction sample_unit_direction(int64_t dim, uint64_t seed);

struct LossSample {
  double t_or_lambda = 0.0;  // radius for radial profiles, t for segments
  double distance = 0.0;     // L2 distance from the base weights
  double train_nll = 0.0;
  double val_nll = 0.0;
};

struct LossProfile {
  enum class Kind { kRadial, kSegment };
  Kind kind = Kind::kRadial;
  std::string anchor_a;  // "w" for the base model
  std::string anchor_b;  // radial: empty; segment: the far anchor's name
  uint64_t seed = 0;     // radial: direction seed
  std::vector<LossSample> samples;
};

// Evaluation budget per probed point.
struct LandscapeEvalConfig {
  int64_t train_blocks = 32;
  int64_t val_blocks = 32;
};

// Log-spaced radii from lo to hi inclusive, with 0 prepended so profiles
// start exactly at the anchor.
std::vector<double> log_spaced_radii(double lo, double hi, int count);

// NLL along w + lambda * unit for each radius. Radii must start at 0 and be
// strictly increasing. A point whose forward pass overflows records +inf
// rather than aborting the sweep.
LossProfile radial_profile(const Parameters& base, const Direction& dir,
                           const std::vector<double>& radii, const TokenDataset& dataset,
                           const LandscapeEvalConfig& eval);

// NLL along the segment (1 - t) w_a + t w_b for each t in ts; ts must start
// at 0 and end at 1. The distance column measures from the base model's
// weights, which the anchors themselves need not equal.
LossProfile segment_profile(const Parameters& base, std::span<const float> w_a,
                            std::span<const float> w_b, const std::string& anchor_a,
                            const std::string& anchor_b, const std::vector<double>& ts,
                            const TokenDataset& dataset, const LandscapeEvalConfig& eval);

struct BasinRule {
  double rise_fraction = 0.5;   // threshold sits this far up from L0 to Linf
  double plateau_tol = 0.05;    // relative spread tolerated over the tail
  double tail_fraction = 0.2;   // trailing share of radii that form the tail
};

struct BasinEstimate {
  double base_loss = 0.0;     // L0
  double plateau_loss = 0.0;  // Linf
  double radius = 0.0;        // R
};

// Half-rise basin radius over a family of radial profiles sharing one radius
// grid, using the train-NLL column: L0 is the loss at radius 0, Linf the
// median tail loss across profiles that flattened out, and R the first radius
// where the cross-direction median crosses L0 + rise_fraction * (Linf - L0)
// (linear interpolation between samples). Refuses with DegenerateInput when
// no profile plateaus ("extend radii") or the plateau never rises above L0.
BasinEstimate basin_radius(const std::vector<LossProfile>& profiles, const BasinRule& rule = {});

double weight_distance(std::span<const float> a, std::span<const float> b);

}  // namespace qlab
