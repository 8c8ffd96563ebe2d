#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qlab/dataset.hpp"
#include "qlab/lm.hpp"
#include "qlab/model.hpp"
#include "qlab/quantizer.hpp"
#include "qlab/tensor.hpp"

namespace qlab {

// Symmetric input-covariance proxy for one layer, in double precision.
struct HessianState {
  std::string layer;
  int d = 0;  // layer input width
  int64_t n_cols = 0;
  std::vector<double> h;  // d x d row-major

  double& at(int i, int j) { return h[static_cast<size_t>(i) * d + j]; }
  double at(int i, int j) const { return h[static_cast<size_t>(i) * d + j]; }
};

// H = (2/n) X X^T over the tap's activation columns.
HessianState accumulate_hessian(const LayerTap& tap);

// H' = H + (factor * mean(diag H)) * I. The factor must be positive; a zero
// diagonal mean means the tap carried no signal.
HessianState damp(const HessianState& hessian, double factor);

struct DampSearchSpace {
  std::vector<double> factors;  // strictly increasing, all positive

  static DampSearchSpace standard();  // {1e-3, 1e-2, ..., 1e4}
  void validate() const;
};

// Column-sequential quantization with second-order error compensation.
// `weight` is [d_in, d_out]; Hessian row/column j corresponds to weight row j.
// Walks input coordinates in order, quantizes each with `q`, and spreads the
// scaled residual over the not-yet-quantized rows via the upper Cholesky
// factor of the damped Hessian's inverse. Fails with NumericFault if the
// Cholesky factorization does not go through.
Tensor gptq_quantize_layer(const Tensor& weight, const HessianState& damped,
                           const CalibratedQuantizer& q);

// Mean squared output error over tap columns: mean_c ||(What - W)^T x_c||^2.
double layer_mse(const Tensor& w_hat, const Tensor& w, const LayerTap& tap);

// Identical quantity computed from the undamped Hessian:
// (1/2) tr((What - W)^T H (What - W)). Used where the tap columns are no
// longer around.
double layer_mse_from_hessian(const Tensor& w_hat, const Tensor& w, const HessianState& hessian);

struct GptqLayerReport {
  std::string layer;
  double chosen_factor = 0.0;  // 0 when round-to-nearest was selected
  bool rtn_selected = false;
  bool cholesky_fallback = false;  // every damp factor failed to factorize
  double mse_rtn = 0.0;
  double mse_selected = 0.0;
};

struct GptqLayerChoice {
  Tensor weight;
  GptqLayerReport report;
};

// Grid search over damp factors plus the round-to-nearest candidate, scored
// by layer MSE under the undamped Hessian; the best candidate wins, so the
// selected weights are never worse than round-to-nearest on that score.
GptqLayerChoice gptq_select_layer(const Tensor& weight, const HessianState& undamped,
                                  const DampSearchSpace& grid, const CalibratedQuantizer& q);

struct GptqResult {
  Parameters params;
  QuantizerSet quantizers;
  std::vector<GptqLayerReport> report;  // forward order
};

// Quantizes every stack weight in forward order. In kSequentialQuantized
// mode, the taps for each layer are re-captured through the partially
// quantized model, so later layers see the inputs they will face at
// inference; kFullPrecision captures all taps from the base model in one
// pass. `max_blocks` caps the calibration blocks (0 = full train split).
GptqResult gptq_quantize_model(const Parameters& params, const TokenDataset& dataset,
                               const DampSearchSpace& grid, QuantFormat format,
                               TapMode mode = TapMode::kSequentialQuantized,
                               int64_t max_blocks = 0);

}  // namespace qlab
