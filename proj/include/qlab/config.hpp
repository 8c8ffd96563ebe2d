#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "qlab/dataset.hpp"
#include "qlab/gptq.hpp"
#include "qlab/lm.hpp"
#include "qlab/model.hpp"
#include "qlab/qaft.hpp"

namespace qlab {

struct LandscapeConfig {
  int directions = 16;
  int radii = 32;            // log-spaced samples beyond the 0 anchor
  int segment_samples = 33;  // including both endpoints
  std::vector<std::string> segment_formats{"int2", "int8"};
  int64_t train_blocks = 32;  // evaluation budget per probed point
  int64_t val_blocks = 32;
  double rise_fraction = 0.5;
  double plateau_tol = 0.05;
  // Radius sweep bounds as multiples of the round-to-nearest displacement:
  // lowest radius is min_factor * the smallest displacement across formats,
  // highest is max_factor * the largest.
  double radius_min_factor = 0.01;
  double radius_max_factor = 4.0;

  void validate() const;
  bool operator==(const LandscapeConfig& o) const = default;
};

struct GptqConfig {
  std::vector<double> damp_grid = DampSearchSpace::standard().factors;
  bool sequential_taps = true;  // false: capture all taps from the base model

  bool operator==(const GptqConfig& o) const = default;
};

// Everything one experiment needs; serialized as JSON. The seed feeds the
// model init, data order, and probe directions, so equal configs give
// byte-identical artifacts.
struct RunConfig {
  std::string corpus;           // path to the corpus file
  std::string out = "runs/out"; // artifact directory
  uint64_t seed = 1;
  ModelConfig model;
  DataConfig data;
  PretrainConfig pretrain;
  std::vector<std::string> formats{"int2", "int3", "int4", "int6", "int8"};
  std::vector<std::string> methods{"rtn", "gptq", "qaft"};
  GptqConfig gptq;
  TrainConfig qaft;
  LandscapeConfig landscape;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // FNV-1a over the canonical JSON dump, as 16 hex digits. Stamped into every
  // CSV so rows can be traced back to the exact configuration.
  std::string hash() const;
  void validate() const;
};

}  // namespace qlab
