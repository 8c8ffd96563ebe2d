#pragma once

#include <map>
#include <string>

#include "qlab/tensor.hpp"

namespace qlab {

struct Parameters;  // model.hpp

// Symmetric integer weight format. The level range is
// {-(2^(B-1)-1), ..., 2^(B-1)-1}; the two's-complement minimum is excluded so
// the grid is symmetric around zero (INT2 is ternary: {-1, 0, 1}).
class QuantFormat {
 public:
  explicit QuantFormat(int bits);
  static QuantFormat parse(const std::string& name);  // "int2" .. "int8"
  int bits() const { return bits_; }
  int max_level() const { return (1 << (bits_ - 1)) - 1; }
  int min_level() const { return -max_level(); }
  std::string name() const { return "int" + std::to_string(bits_); }
  bool operator==(const QuantFormat& o) const { return bits_ == o.bits_; }

 private:
  int bits_;
};

// All formats the lab supports, in ascending bit width.
const std::vector<QuantFormat>& supported_formats();

struct LevelRange {
  int min_level;
  int max_level;
};
LevelRange quant_levels(QuantFormat f);

// Per-tensor symmetric fake quantizer:
//   q(x) = scale * clamp(round(x / scale), min_level, max_level)
// with halves rounded away from zero.
struct CalibratedQuantizer {
  QuantFormat format;
  float scale;

  float apply(float x) const;
};

Tensor fake_quantize(const Tensor& w, const CalibratedQuantizer& q);

// Number of scale candidates examined by calibrate_scale. Candidate i spans
// a_i = (i / kScaleGridSize) * max|w| for i = 1..kScaleGridSize; the scale
// with minimum total squared error wins, ties going to the smaller scale.
// A fixed grid keeps calibration deterministic and exhaustively testable at
// this tensor size, where a histogram-based observer would buy nothing.
constexpr int kScaleGridSize = 512;

CalibratedQuantizer calibrate_scale(const Tensor& w, QuantFormat f);

using QuantizerSet = std::map<std::string, CalibratedQuantizer>;

// One calibrated quantizer per transformer-stack linear weight. Embeddings,
// the output head, layernorm parameters and biases stay in full precision.
QuantizerSet calibrate_model(const Parameters& params, QuantFormat f);

// Round-to-nearest baseline: calibrate every stack weight, then replace it
// with its fake-quantized image. Returns the quantized copy; `out_quantizers`
// (optional) receives the calibrated scales.
Parameters quantize_model_rtn(const Parameters& params, QuantFormat f,
                              QuantizerSet* out_quantizers = nullptr);

// Applies existing quantizers to their tensors; any other tensor is copied.
Parameters apply_quantizers(const Parameters& params, const QuantizerSet& quantizers);

}  // namespace qlab
