#include "qlab/model.hpp"

#include <cmath>

#include "qlab/error.hpp"
#include "qlab/rng.hpp"

namespace qlab {

namespace {

// Stream ids for mix_seed so each tensor gets an independent slice of the
// seed space regardless of initialization order.
constexpr uint64_t kInitStreamBase = 100;

std::string block_prefix(int b) { return "block" + std::to_string(b) + "."; }

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("model: vocab_size must be at least 2");
  if (seq_len < 2) throw ConfigError("model: seq_len must be at least 2");
  if (d_model <= 0 || d_ff <= 0 || n_layers <= 0) {
    throw ConfigError("model: dimensions must be positive");
  }
  if (n_heads <= 0 || d_model % n_heads != 0) {
    throw ConfigError("model: n_heads must divide d_model");
  }
}

const Tensor& Parameters::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractViolation("parameters: no tensor named " + name);
  return it->second;
}

Tensor& Parameters::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractViolation("parameters: no tensor named " + name);
  return it->second;
}

std::vector<std::string> parameter_order(const ModelConfig& config) {
  std::vector<std::string> order;
  order.push_back("tok_emb");
  order.push_back("pos_emb");
  for (int b = 0; b < config.n_layers; ++b) {
    std::string p = block_prefix(b);
    for (const char* stem : {"ln1.gamma", "ln1.beta", "wq", "bq", "wk", "bk", "wv", "bv",
                             "wo", "bo", "ln2.gamma", "ln2.beta", "wfc1", "bfc1", "wfc2",
                             "bfc2"}) {
      order.push_back(p + stem);
    }
  }
  order.push_back("lnf.gamma");
  order.push_back("lnf.beta");
  order.push_back("head");
  return order;
}

std::vector<std::string> quantized_weight_names(const ModelConfig& config) {
  std::vector<std::string> names;
  for (int b = 0; b < config.n_layers; ++b) {
    std::string p = block_prefix(b);
    for (const char* stem : {"wq", "wk", "wv", "wo", "wfc1", "wfc2"}) {
      names.push_back(p + stem);
    }
  }
  return names;
}

int64_t quantized_dim(const ModelConfig& config) {
  int64_t d = static_cast<int64_t>(config.d_model);
  int64_t ff = static_cast<int64_t>(config.d_ff);
  return static_cast<int64_t>(config.n_layers) * (4 * d * d + 2 * d * ff);
}

Parameters init_parameters(const ModelConfig& config) {
  config.validate();
  Parameters params;
  params.config = config;
  // Residual-branch output projections are shrunk by 1/sqrt(2 n_layers) so
  // the residual stream keeps unit-order variance at any depth.
  float resid_scale = 1.0f / std::sqrt(2.0f * static_cast<float>(config.n_layers));
  uint64_t stream = kInitStreamBase;
  auto normal_tensor = [&](std::vector<int> shape, float stddev) {
    Rng rng(mix_seed(config.seed, stream++));
    Tensor t(std::move(shape));
    for (float& v : t.data) v = stddev * static_cast<float>(rng.normal());
    return t;
  };
  auto const_tensor = [](std::vector<int> shape, float value) {
    Tensor t(std::move(shape));
    for (float& v : t.data) v = value;
    return t;
  };
  int d = config.d_model, ff = config.d_ff, v = config.vocab_size, t = config.seq_len;
  params.tensors["tok_emb"] = normal_tensor({v, d}, 0.02f);
  params.tensors["pos_emb"] = normal_tensor({t, d}, 0.02f);
  for (int b = 0; b < config.n_layers; ++b) {
    std::string p = block_prefix(b);
    params.tensors[p + "ln1.gamma"] = const_tensor({d}, 1.0f);
    params.tensors[p + "ln1.beta"] = const_tensor({d}, 0.0f);
    params.tensors[p + "wq"] = normal_tensor({d, d}, 0.02f);
    params.tensors[p + "bq"] = const_tensor({d}, 0.0f);
    params.tensors[p + "wk"] = normal_tensor({d, d}, 0.02f);
    params.tensors[p + "bk"] = const_tensor({d}, 0.0f);
    params.tensors[p + "wv"] = normal_tensor({d, d}, 0.02f);
    params.tensors[p + "bv"] = const_tensor({d}, 0.0f);
    params.tensors[p + "wo"] = normal_tensor({d, d}, 0.02f * resid_scale);
    params.tensors[p + "bo"] = const_tensor({d}, 0.0f);
    params.tensors[p + "ln2.gamma"] = const_tensor({d}, 1.0f);
    params.tensors[p + "ln2.beta"] = const_tensor({d}, 0.0f);
    params.tensors[p + "wfc1"] = normal_tensor({d, ff}, 0.02f);
    params.tensors[p + "bfc1"] = const_tensor({ff}, 0.0f);
    params.tensors[p + "wfc2"] = normal_tensor({ff, d}, 0.02f * resid_scale);
    params.tensors[p + "bfc2"] = const_tensor({d}, 0.0f);
  }
  params.tensors["lnf.gamma"] = const_tensor({d}, 1.0f);
  params.tensors["lnf.beta"] = const_tensor({d}, 0.0f);
  params.tensors["head"] = normal_tensor({d, v}, 0.02f);
  return params;
}

std::vector<float> flatten_quantized(const Parameters& params) {
  std::vector<float> w;
  w.reserve(static_cast<size_t>(quantized_dim(params.config)));
  for (const std::string& name : quantized_weight_names(params.config)) {
    const Tensor& t = params.at(name);
    w.insert(w.end(), t.data.begin(), t.data.end());
  }
  return w;
}

void unflatten_quantized(Parameters& params, std::span<const float> w) {
  if (static_cast<int64_t>(w.size()) != quantized_dim(params.config)) {
    throw ContractViolation("unflatten_quantized: coordinate vector has the wrong length");
  }
  size_t off = 0;
  for (const std::string& name : quantized_weight_names(params.config)) {
    Tensor& t = params.at(name);
    for (int64_t i = 0; i < t.numel(); ++i) t.data[static_cast<size_t>(i)] = w[off++];
  }
}

}  // namespace qlab
