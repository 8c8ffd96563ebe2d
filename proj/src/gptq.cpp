#include "qlab/gptq.hpp"

#include <cmath>

#include "qlab/error.hpp"

namespace qlab {

namespace {

// Cholesky A = L L^T with L lower triangular. Returns false when a pivot is
// non-positive or non-finite instead of throwing, so the damp grid search can
// move on to the next factor.
bool chol_lower(const std::vector<double>& a, int d, std::vector<double>& l) {
  l.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = a[static_cast<size_t>(i) * d + j];
      for (int k = 0; k < j; ++k) {
        sum -= l[static_cast<size_t>(i) * d + k] * l[static_cast<size_t>(j) * d + k];
      }
      if (i == j) {
        if (!(sum > 0.0) || !std::isfinite(sum)) return false;
        l[static_cast<size_t>(i) * d + j] = std::sqrt(sum);
      } else {
        l[static_cast<size_t>(i) * d + j] = sum / l[static_cast<size_t>(j) * d + j];
      }
    }
  }
  return true;
}

// Upper triangular U with A^{-1} = U^T U, via L^{-1} and a second
// factorization of the explicit inverse.
bool inverse_upper_factor(const std::vector<double>& a, int d, std::vector<double>& u) {
  std::vector<double> l;
  if (!chol_lower(a, d, l)) return false;
  // X = L^{-1} by forward substitution, lower triangular.
  std::vector<double> x(static_cast<size_t>(d) * d, 0.0);
  for (int c = 0; c < d; ++c) {
    x[static_cast<size_t>(c) * d + c] = 1.0 / l[static_cast<size_t>(c) * d + c];
    for (int i = c + 1; i < d; ++i) {
      double s = 0.0;
      for (int k = c; k < i; ++k) {
        s -= l[static_cast<size_t>(i) * d + k] * x[static_cast<size_t>(k) * d + c];
      }
      x[static_cast<size_t>(i) * d + i] = 1.0 / l[static_cast<size_t>(i) * d + i];
      if (i != c) x[static_cast<size_t>(i) * d + c] = s / l[static_cast<size_t>(i) * d + i];
    }
  }
  // A^{-1} = X^T X; only k >= max(i, j) contributes.
  std::vector<double> inv(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      double s = 0.0;
      for (int k = j; k < d; ++k) {
        s += x[static_cast<size_t>(k) * d + i] * x[static_cast<size_t>(k) * d + j];
      }
      inv[static_cast<size_t>(i) * d + j] = s;
      inv[static_cast<size_t>(j) * d + i] = s;
    }
  }
  std::vector<double> l2;
  if (!chol_lower(inv, d, l2)) return false;
  u.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      u[static_cast<size_t>(j) * d + i] = l2[static_cast<size_t>(i) * d + j];
    }
  }
  return true;
}

void check_layer_shapes(const Tensor& w_hat, const Tensor& w, int d_in, const char* op) {
  if (w.rank() != 2 || !w_hat.same_shape(w)) {
    throw ContractViolation(std::string(op) + ": weights must be rank 2 with equal shapes");
  }
  if (w.rows() != d_in) {
    throw ContractViolation(std::string(op) + ": weight rows must match the tap width");
  }
}

}  // namespace

HessianState accumulate_hessian(const LayerTap& tap) {
  if (tap.d_in <= 0 || tap.n_cols <= 0) {
    throw DegenerateInput("accumulate_hessian: tap holds no columns");
  }
  ensure_finite(std::span<const float>(tap.cols), "hessian tap " + tap.layer);
  HessianState hs;
  hs.layer = tap.layer;
  hs.d = tap.d_in;
  hs.n_cols = tap.n_cols;
  hs.h.assign(static_cast<size_t>(hs.d) * hs.d, 0.0);
  for (int64_t c = 0; c < tap.n_cols; ++c) {
    const float* x = tap.cols.data() + c * tap.d_in;
    for (int i = 0; i < hs.d; ++i) {
      double xi = x[i];
      double* row = hs.h.data() + static_cast<size_t>(i) * hs.d;
      for (int j = i; j < hs.d; ++j) row[j] += xi * x[j];
    }
  }
  double scale = 2.0 / static_cast<double>(hs.n_cols);
  for (int i = 0; i < hs.d; ++i) {
    for (int j = i; j < hs.d; ++j) {
      double v = hs.h[static_cast<size_t>(i) * hs.d + j] * scale;
      hs.h[static_cast<size_t>(i) * hs.d + j] = v;
      hs.h[static_cast<size_t>(j) * hs.d + i] = v;
    }
  }
  return hs;
}

HessianState damp(const HessianState& hessian, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw ContractViolation("damp: factor must be positive and finite");
  }
  if (hessian.d <= 0) throw ContractViolation("damp: empty Hessian");
  double mean_diag = 0.0;
  for (int i = 0; i < hessian.d; ++i) mean_diag += hessian.at(i, i);
  mean_diag /= hessian.d;
  if (!(mean_diag > 0.0)) {
    throw DegenerateInput("damp: Hessian diagonal has no mass (layer " + hessian.layer + ")");
  }
  HessianState out = hessian;
  for (int i = 0; i < out.d; ++i) out.at(i, i) += factor * mean_diag;
  return out;
}

DampSearchSpace DampSearchSpace::standard() {
  return DampSearchSpace{{1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4}};
}

void DampSearchSpace::validate() const {
  if (factors.empty()) throw ConfigError("damp grid: no factors");
  double prev = 0.0;
  for (double f : factors) {
    if (!(f > prev) || !std::isfinite(f)) {
      throw ConfigError("damp grid: factors must be positive, finite and strictly increasing");
    }
    prev = f;
  }
}

Tensor gptq_quantize_layer(const Tensor& weight, const HessianState& damped,
                           const CalibratedQuantizer& q) {
  if (weight.rank() != 2) throw ContractViolation("gptq_quantize_layer: weight must be rank 2");
  if (weight.rows() != damped.d) {
    throw ContractViolation("gptq_quantize_layer: weight rows must match the Hessian size");
  }
  ensure_finite(weight, "gptq_quantize_layer weight");
  int d = damped.d, d_out = weight.cols();
  std::vector<double> u;
  if (!inverse_upper_factor(damped.h, d, u)) {
    throw NumericFault("gptq: Cholesky factorization failed for layer " + damped.layer);
  }
  Tensor w = weight;
  std::vector<double> err(static_cast<size_t>(d_out));
  for (int j = 0; j < d; ++j) {
    double ujj = u[static_cast<size_t>(j) * d + j];
    float* wrow = w.data.data() + static_cast<size_t>(j) * d_out;
    for (int o = 0; o < d_out; ++o) {
      float orig = wrow[o];
      float qv = q.apply(orig);
      wrow[o] = qv;
      err[static_cast<size_t>(o)] = (static_cast<double>(orig) - qv) / ujj;
    }
    for (int k = j + 1; k < d; ++k) {
      double ujk = u[static_cast<size_t>(j) * d + k];
      if (ujk == 0.0) continue;
      float* wk = w.data.data() + static_cast<size_t>(k) * d_out;
      for (int o = 0; o < d_out; ++o) {
        wk[o] = static_cast<float>(wk[o] - err[static_cast<size_t>(o)] * ujk);
      }
    }
  }
  ensure_finite(w, "gptq_quantize_layer output for " + damped.layer);
  return w;
}

double layer_mse(const Tensor& w_hat, const Tensor& w, const LayerTap& tap) {
  check_layer_shapes(w_hat, w, tap.d_in, "layer_mse");
  if (tap.n_cols <= 0) throw DegenerateInput("layer_mse: tap holds no columns");
  int d_in = tap.d_in, d_out = w.cols();
  std::vector<double> y(static_cast<size_t>(d_out));
  double total = 0.0;
  for (int64_t c = 0; c < tap.n_cols; ++c) {
    const float* x = tap.cols.data() + c * d_in;
    std::fill(y.begin(), y.end(), 0.0);
    for (int i = 0; i < d_in; ++i) {
      double xi = x[i];
      if (xi == 0.0) continue;
      const float* ha = w_hat.data.data() + static_cast<size_t>(i) * d_out;
      const float* wa = w.data.data() + static_cast<size_t>(i) * d_out;
      for (int o = 0; o < d_out; ++o) y[static_cast<size_t>(o)] += xi * (static_cast<double>(ha[o]) - wa[o]);
    }
    for (int o = 0; o < d_out; ++o) total += y[static_cast<size_t>(o)] * y[static_cast<size_t>(o)];
  }
  return total / static_cast<double>(tap.n_cols);
}

double layer_mse_from_hessian(const Tensor& w_hat, const Tensor& w, const HessianState& hessian) {
  check_layer_shapes(w_hat, w, hessian.d, "layer_mse_from_hessian");
  int d = hessian.d, d_out = w.cols();
  std::vector<double> e(static_cast<size_t>(d));
  double total = 0.0;
  for (int o = 0; o < d_out; ++o) {
    for (int i = 0; i < d; ++i) {
      e[static_cast<size_t>(i)] =
          static_cast<double>(w_hat.data[static_cast<size_t>(i) * d_out + o]) -
          w.data[static_cast<size_t>(i) * d_out + o];
    }
    for (int i = 0; i < d; ++i) {
      double ei = e[static_cast<size_t>(i)];
      if (ei == 0.0) continue;
      const double* hrow = hessian.h.data() + static_cast<size_t>(i) * d;
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += hrow[j] * e[static_cast<size_t>(j)];
      total += ei * acc;
    }
  }
  return 0.5 * total;
}

GptqLayerChoice gptq_select_layer(const Tensor& weight, const HessianState& undamped,
                                  const DampSearchSpace& grid, const CalibratedQuantizer& q) {
  grid.validate();
  GptqLayerChoice choice;
  choice.report.layer = undamped.layer;
  choice.weight = fake_quantize(weight, q);
  choice.report.mse_rtn = layer_mse_from_hessian(choice.weight, weight, undamped);
  choice.report.mse_selected = choice.report.mse_rtn;
  choice.report.rtn_selected = true;
  int factorizations = 0;
  for (double factor : grid.factors) {
    Tensor cand;
    try {
      cand = gptq_quantize_layer(weight, damp(undamped, factor), q);
    } catch (const NumericFault&) {
      continue;  // ill-conditioned at this damp level; try the next one
    }
    ++factorizations;
    double mse = layer_mse_from_hessian(cand, weight, undamped);
    if (mse < choice.report.mse_selected) {
      choice.weight = std::move(cand);
      choice.report.mse_selected = mse;
      choice.report.chosen_factor = factor;
      choice.report.rtn_selected = false;
    }
  }
  choice.report.cholesky_fallback = factorizations == 0;
  return choice;
}

GptqResult gptq_quantize_model(const Parameters& params, const TokenDataset& dataset,
                               const DampSearchSpace& grid, QuantFormat format, TapMode mode,
                               int64_t max_blocks) {
  grid.validate();
  GptqResult result;
  result.quantizers = calibrate_model(params, format);
  result.params = params;

  int64_t count = dataset.split_count(Split::kTrain);
  if (max_blocks > 0 && max_blocks < count) count = max_blocks;
  if (count == 0) throw ContractViolation("gptq_quantize_model: train split has no blocks");

  // Layer groups that share one tap, in forward order. wq/wk/wv read the same
  // layernorm output, so one Hessian serves all three.
  std::vector<std::vector<std::string>> groups;
  for (int b = 0; b < params.config.n_layers; ++b) {
    std::string p = "block" + std::to_string(b) + ".";
    groups.push_back({p + "wq", p + "wk", p + "wv"});
    groups.push_back({p + "wo"});
    groups.push_back({p + "wfc1"});
    groups.push_back({p + "wfc2"});
  }

  auto capture_group_taps = [&](const Parameters& model, std::vector<LayerTaps>& per_group) {
    per_group.assign(groups.size(), LayerTaps{});
    for (int64_t i = 0; i < count; ++i) {
      Graph g;
      LayerTaps taps;
      build_nll_graph(g, model, nullptr, dataset.split_block(Split::kTrain, i), nullptr, &taps);
      for (size_t gi = 0; gi < groups.size(); ++gi) {
        const std::string& rep = groups[gi][0];
        LayerTap& src = taps.at(rep);
        LayerTap& dst = per_group[gi][rep];
        if (dst.d_in == 0) {
          dst.layer = rep;
          dst.d_in = src.d_in;
        }
        dst.cols.insert(dst.cols.end(), src.cols.begin(), src.cols.end());
        dst.n_cols += src.n_cols;
      }
    }
  };

  if (mode == TapMode::kFullPrecision) {
    // One pass over the base model collects every group's tap.
    std::vector<LayerTaps> per_group;
    capture_group_taps(params, per_group);
    for (size_t gi = 0; gi < groups.size(); ++gi) {
      HessianState h = accumulate_hessian(per_group[gi].at(groups[gi][0]));
      for (const std::string& layer : groups[gi]) {
        h.layer = layer;
        GptqLayerChoice choice = gptq_select_layer(params.at(layer), h, grid,
                                                   result.quantizers.at(layer));
        result.params.at(layer) = std::move(choice.weight);
        result.report.push_back(std::move(choice.report));
      }
    }
    return result;
  }

  // Sequential mode: re-stream the calibration blocks before each group so
  // its tap reflects the layers already quantized.
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    LayerTap tap;
    for (int64_t i = 0; i < count; ++i) {
      Graph g;
      LayerTaps taps;
      build_nll_graph(g, result.params, nullptr, dataset.split_block(Split::kTrain, i), nullptr,
                      &taps);
      LayerTap& src = taps.at(groups[gi][0]);
      if (tap.d_in == 0) {
        tap.layer = src.layer;
        tap.d_in = src.d_in;
      }
      tap.cols.insert(tap.cols.end(), src.cols.begin(), src.cols.end());
      tap.n_cols += src.n_cols;
    }
    HessianState h = accumulate_hessian(tap);
    for (const std::string& layer : groups[gi]) {
      h.layer = layer;
      GptqLayerChoice choice =
          gptq_select_layer(params.at(layer), h, grid, result.quantizers.at(layer));
      result.params.at(layer) = std::move(choice.weight);
      result.report.push_back(std::move(choice.report));
    }
  }
  return result;
}

}  // namespace qlab
