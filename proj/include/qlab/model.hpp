#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qlab/tensor.hpp"

namespace qlab {

// Decoder-only byte-level transformer. Vocabulary is the 256 byte values plus
// a reserved pad id (256) that ingestion never produces.
struct ModelConfig {
  int vocab_size = 257;
  int seq_len = 128;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 256;
  uint64_t seed = 1;

  void validate() const;  // throws ConfigError
  bool operator==(const ModelConfig& o) const = default;
};

// Named parameter tensors.
//
// Linear weights are stored [d_in, d_out] so the forward pass is y = x W + b
// with row-major matmuls. The quantized coordinate vector concatenates, for
// block b = 0 .. n_layers-1 in order,
//   block<b>.wq, .wk, .wv, .wo, .wfc1, .wfc2
// each flattened row-major. Checkpoints, GPTQ, QAFT and the landscape probes
// all share this coordinate system.
struct Parameters {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
};

// Canonical serialization order of every parameter tensor.
std::vector<std::string> parameter_order(const ModelConfig& config);

// The transformer-stack linear weights eligible for quantization, in the
// flattening order documented on Parameters. Embeddings, the head, layernorm
// parameters and biases are excluded.
std::vector<std::string> quantized_weight_names(const ModelConfig& config);

// Total element count of the quantized coordinate vector.
int64_t quantized_dim(const ModelConfig& config);

// Fresh parameters: normal(0, 0.02) weights and embeddings, scaled residual
// projections, zero biases, unit layernorm gains. Deterministic in the seed.
Parameters init_parameters(const ModelConfig& config);

std::vector<float> flatten_quantized(const Parameters& params);
void unflatten_quantized(Parameters& params, std::span<const float> w);

}  // namespace qlab
