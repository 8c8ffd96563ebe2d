#include "qlab/quantizer.hpp"

#include <cmath>

#include "qlab/error.hpp"
#include "qlab/model.hpp"

namespace qlab {

QuantFormat::QuantFormat(int bits) : bits_(bits) {
  switch (bits) {
    case 2:
    case 3:
    case 4:
    case 6:
    case 8:
      break;
    default:
      throw ConfigError("unsupported quantization width: " + std::to_string(bits) + " bits");
  }
}

QuantFormat QuantFormat::parse(const std::string& name) {
  for (const QuantFormat& f : supported_formats()) {
    if (f.name() == name) return f;
  }
  throw ConfigError("unknown quantization format: " + name);
}

const std::vector<QuantFormat>& supported_formats() {
  static const std::vector<QuantFormat> formats = {
      QuantFormat(2), QuantFormat(3), QuantFormat(4), QuantFormat(6), QuantFormat(8)};
  return formats;
}

LevelRange quant_levels(QuantFormat f) { return {f.min_level(), f.max_level()}; }

float CalibratedQuantizer::apply(float x) const {
  float level = std::round(x / scale);
  float lo = static_cast<float>(format.min_level());
  float hi = static_cast<float>(format.max_level());
  if (level < lo) level = lo;
  if (level > hi) level = hi;
  return scale * level;
}

Tensor fake_quantize(const Tensor& w, const CalibratedQuantizer& q) {
  if (!(q.scale > 0.0f) || !std::isfinite(q.scale)) {
    throw ContractViolation("fake_quantize: scale must be positive and finite");
  }
  ensure_finite(w, "fake_quantize input");
  Tensor out = w;
  for (float& v : out.data) v = q.apply(v);
  return out;
}

CalibratedQuantizer calibrate_scale(const Tensor& w, QuantFormat f) {
  if (w.numel() == 0) throw DegenerateInput("calibrate_scale: empty tensor");
  ensure_finite(w, "calibrate_scale input");
  float absmax = 0.0f;
  for (float v : w.data) absmax = std::max(absmax, std::fabs(v));
  if (absmax == 0.0f) {
    throw DegenerateInput("calibrate_scale: all-zero tensor has no usable scale");
  }
  float lo = static_cast<float>(f.min_level());
  float hi = static_cast<float>(f.max_level());
  double best_err = 0.0;
  float best_scale = 0.0f;
  for (int i = 1; i <= kScaleGridSize; ++i) {
    float a = (static_cast<float>(i) / kScaleGridSize) * absmax;
    double err = 0.0;
    for (float v : w.data) {
      float level = std::round(v / a);
      if (level < lo) level = lo;
      if (level > hi) level = hi;
      double diff = static_cast<double>(a * level) - static_cast<double>(v);
      err += diff * diff;
    }
    if (best_scale == 0.0f || err < best_err) {
      best_err = err;
      best_scale = a;
    }
  }
  return CalibratedQuantizer{f, best_scale};
}

QuantizerSet calibrate_model(const Parameters& params, QuantFormat f) {
  QuantizerSet set;
  for (const std::string& name : quantized_weight_names(params.config)) {
    set.insert({name, calibrate_scale(params.at(name), f)});
  }
  return set;
}

Parameters quantize_model_rtn(const Parameters& params, QuantFormat f,
                              QuantizerSet* out_quantizers) {
  QuantizerSet set = calibrate_model(params, f);
  Parameters out = apply_quantizers(params, set);
  if (out_quantizers) *out_quantizers = std::move(set);
  return out;
}

Parameters apply_quantizers(const Parameters& params, const QuantizerSet& quantizers) {
  Parameters out = params;
  for (const auto& [name, q] : quantizers) {
    out.at(name) = fake_quantize(params.at(name), q);
  }
  return out;
}

}  // namespace qlab
