#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "qlab/dataset.hpp"
#include "qlab/graph.hpp"
#include "qlab/model.hpp"
#include "qlab/quantizer.hpp"

namespace qlab {

// Activation columns feeding one quantized weight: column c is the input
// vector of the c-th (block, position) pair, stored contiguously.
struct LayerTap {
  std::string layer;
  int d_in = 0;
  int64_t n_cols = 0;
  std::vector<float> cols;  // column-major, size d_in * n_cols

  std::span<const float> col(int64_t c) const {
    return std::span<const float>(cols.data() + c * d_in, static_cast<size_t>(d_in));
  }
};
using LayerTaps = std::map<std::string, LayerTap>;

enum class TapMode { kFullPrecision, kSequentialQuantized };

// Builds the forward graph for one block of tokens and returns the loss node
// (mean next-token NLL; the final position has no target). When `quantizers`
// is set, each covered weight passes through a straight-through fake-quantize
// node before its matmul. `trainable` selects which parameter leaves require
// gradients (nullptr: none, evaluation only). When `taps` is set, the input
// activations of every quantizable weight are appended to it.
Graph::NodeId build_nll_graph(Graph& g, const Parameters& params,
                              const QuantizerSet* quantizers, std::span<const int32_t> tokens,
                              const std::set<std::string>* trainable = nullptr,
                              LayerTaps* taps = nullptr);

// Logits tensor [n, vocab] for a token span; used by tests probing causality.
Tensor forward_logits(const Parameters& params, const QuantizerSet* quantizers,
                      std::span<const int32_t> tokens);

// Mean NLL of one block.
double forward_nll(const Parameters& params, const QuantizerSet* quantizers,
                   std::span<const int32_t> tokens);

// Mean NLL over the first `max_blocks` blocks of a split (0 = the whole
// split). Parameters are treated as frozen; evaluation touches no state.
double eval_nll(const Parameters& params, const QuantizerSet* quantizers,
                const TokenDataset& dataset, Split split, int64_t max_blocks = 0);

// Records the input activations of every quantizable weight over train-split
// blocks. kFullPrecision runs the base model as-is; kSequentialQuantized runs
// it with `quantizers` applied to every stack weight, so the tap of each
// layer reflects already-quantized earlier layers.
LayerTaps capture_layer_taps(const Parameters& params, const TokenDataset& dataset, TapMode mode,
                             const QuantizerSet* quantizers = nullptr, int64_t max_blocks = 0);

struct PretrainConfig {
  int64_t steps = 2400;
  int batch_size = 8;
  double lr = 1e-3;
  double grad_clip = 1.0;      // global-norm clip, 0 disables
  int64_t eval_every = 200;
  int64_t eval_blocks = 64;    // validation blocks per evaluation
  bool operator==(const PretrainConfig& o) const = default;
};

struct PretrainTraceRow {
  int64_t step;
  double lr;
  double train_loss;  // mean over the window since the previous row
  double val_nll;
};

struct PretrainResult {
  Parameters params;  // best validation checkpoint
  std::vector<PretrainTraceRow> trace;
  double best_val_nll = 0.0;
};

// AdamW pretraining of a fresh model on the pretrain region. Deterministic in
// config.seed; divergence raises TrainingFault.
PretrainResult pretrain_base(const ModelConfig& config, const TokenDataset& dataset,
                             const PretrainConfig& pcfg);

// Serialized weight footprint of the transformer stack: ceil(numel * B / 8)
// bytes per quantized weight, 4 bytes per element of every other stack tensor
// (layernorms, biases). Embeddings and head are excluded: they are shared by
// all methods. Pass nullopt for the full-precision footprint.
int64_t weight_size_bytes(const ModelConfig& config, std::optional<QuantFormat> format);

}  // namespace qlab
