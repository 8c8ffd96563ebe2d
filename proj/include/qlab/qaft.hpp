#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qlab/dataset.hpp"
#include "qlab/graph.hpp"
#include "qlab/model.hpp"
#include "qlab/quantizer.hpp"

namespace qlab {

// Straight-through estimator of the quantizer Jacobian: gradients pass
// through unchanged. Kept as a named primitive so the convention is testable
// on its own; Graph::straight_through applies the same rule inside the tape.
Tensor ste_gradient(const Tensor& upstream);

// lr0 * (1 - 0.9 * step / total_steps); step counts from 0 to total_steps.
double linear_decay(double lr0, int64_t step, int64_t total_steps);

// Global-norm gradient clipping; scales in place when the norm exceeds
// max_norm (max_norm <= 0 disables). Returns the pre-clip norm.
double clip_gradients(GradientMap& grads, double max_norm);

struct TrainConfig {
  std::vector<double> lr_grid{1e-6, 1e-5, 1e-4, 1e-3};
  int epochs = 8;
  int batch_size = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 0.0;     // global-norm clip, 0 disables
  int64_t eval_blocks = 64;   // validation blocks per epoch evaluation, 0 = full split
  bool trace_test_nll = true; // fill per-epoch test NLL for the selected lr

  void validate() const;  // throws ConfigError
  bool operator==(const TrainConfig& o) const = default;
};

struct OptimizerState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  int64_t step = 0;
};

// One AdamW update over exactly the tensors named in `grads`. Moment tensors
// are created on first use; shapes must match thereafter.
void adamw_step(Parameters& params, const GradientMap& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg);

struct QaftTraceRow {
  double lr = 0.0;
  int epoch = 0;       // 0 is the untrained round-to-nearest starting point
  double train_nll = 0.0;
  double val_nll = 0.0;
  double test_nll = -1.0;  // filled for the selected lr only; negative = absent
};

struct QaftResult {
  Parameters params;  // raw (off-grid) weights of the best snapshot
  QuantizerSet quantizers;
  std::vector<QaftTraceRow> trace;
  double best_lr = 0.0;
  int best_epoch = 0;
  double best_val_nll = 0.0;
  std::vector<double> failed_lrs;  // diverged and were skipped
};

// Quantization-aware fine-tuning: starting from the pretrained weights, for
// each learning rate in the grid, run `epochs` passes over the train split at
// `batch_size`, forwarding every quantized weight through its frozen
// straight-through fake-quantizer and updating only those weights. The
// snapshot with the best validation NLL across all rates and epochs wins.
// Epoch 0 rows record the starting point, so the trace begins at the
// round-to-nearest baseline. Throws TrainingFault if every rate diverges.
QaftResult qaft_train(const Parameters& pretrained, const QuantizerSet& quantizers,
                      const TokenDataset& dataset, const TrainConfig& cfg, uint64_t seed);

}  // namespace qlab
