#include "qlab/lm.hpp"

#include <cmath>

#include "qlab/error.hpp"
#include "qlab/qaft.hpp"
#include "qlab/rng.hpp"

namespace qlab {

namespace {

constexpr uint64_t kPretrainOrderStream = 7;

// Appends the rows of a [n, d] activation value as columns of the tap.
void record_tap(LayerTaps& taps, const std::string& layer, const Tensor& value) {
  LayerTap& tap = taps[layer];
  if (tap.d_in == 0) {
    tap.layer = layer;
    tap.d_in = value.cols();
  } else if (tap.d_in != value.cols()) {
    throw ContractViolation("layer tap " + layer + ": inconsistent input width");
  }
  tap.cols.insert(tap.cols.end(), value.data.begin(), value.data.end());
  tap.n_cols += value.rows();
}

}  // namespace

Graph::NodeId build_nll_graph(Graph& g, const Parameters& params, const QuantizerSet* quantizers,
                              std::span<const int32_t> tokens,
                              const std::set<std::string>* trainable, LayerTaps* taps) {
  const ModelConfig& cfg = params.config;
  int n = static_cast<int>(tokens.size());
  if (n < 2) throw ContractViolation("build_nll_graph: need at least two tokens");
  if (n > cfg.seq_len) throw ContractViolation("build_nll_graph: block longer than seq_len");
  auto leaf = [&](const std::string& name) {
    bool req = trainable != nullptr && trainable->count(name) > 0;
    return g.input(params.at(name), name, req);
  };
  auto weight = [&](const std::string& name) {
    Graph::NodeId id = leaf(name);
    if (quantizers) {
      auto it = quantizers->find(name);
      if (it != quantizers->end()) {
        CalibratedQuantizer q = it->second;
        id = g.straight_through(
            id, [q](const Tensor& t) { return fake_quantize(t, q); }, "quantize:" + name);
      }
    }
    return id;
  };
  std::vector<int> ids(tokens.begin(), tokens.end());
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) throw ContractViolation("build_nll_graph: token out of range");
  }
  std::vector<int> pos_ids(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pos_ids[static_cast<size_t>(i)] = i;

  Graph::NodeId tok = g.embedding_gather(leaf("tok_emb"), ids);
  Graph::NodeId pos = g.embedding_gather(leaf("pos_emb"), pos_ids);
  Graph::NodeId x = g.add(tok, pos);
  for (int b = 0; b < cfg.n_layers; ++b) {
    std::string p = "block" + std::to_string(b) + ".";
    Graph::NodeId h = g.layernorm(x, leaf(p + "ln1.gamma"), leaf(p + "ln1.beta"));
    if (taps) {
      record_tap(*taps, p + "wq", g.value(h));
      record_tap(*taps, p + "wk", g.value(h));
      record_tap(*taps, p + "wv", g.value(h));
    }
    Graph::NodeId q = g.add(g.matmul(h, weight(p + "wq")), leaf(p + "bq"));
    Graph::NodeId k = g.add(g.matmul(h, weight(p + "wk")), leaf(p + "bk"));
    Graph::NodeId v = g.add(g.matmul(h, weight(p + "wv")), leaf(p + "bv"));
    Graph::NodeId a = g.causal_attention(q, k, v, cfg.n_heads);
    if (taps) record_tap(*taps, p + "wo", g.value(a));
    Graph::NodeId ao = g.add(g.matmul(a, weight(p + "wo")), leaf(p + "bo"));
    x = g.add(x, ao);
    Graph::NodeId h2 = g.layernorm(x, leaf(p + "ln2.gamma"), leaf(p + "ln2.beta"));
    if (taps) record_tap(*taps, p + "wfc1", g.value(h2));
    Graph::NodeId f1 = g.add(g.matmul(h2, weight(p + "wfc1")), leaf(p + "bfc1"));
    Graph::NodeId g1 = g.gelu(f1);
    if (taps) record_tap(*taps, p + "wfc2", g.value(g1));
    Graph::NodeId f2 = g.add(g.matmul(g1, weight(p + "wfc2")), leaf(p + "bfc2"));
    x = g.add(x, f2);
  }
  Graph::NodeId xf = g.layernorm(x, leaf("lnf.gamma"), leaf("lnf.beta"));
  Graph::NodeId logits = g.matmul(xf, leaf("head"));
  std::vector<int> targets(static_cast<size_t>(n));
  for (int i = 0; i + 1 < n; ++i) targets[static_cast<size_t>(i)] = ids[static_cast<size_t>(i) + 1];
  targets[static_cast<size_t>(n) - 1] = -1;  // final position predicts nothing
  return g.cross_entropy(logits, std::move(targets));
}

Tensor forward_logits(const Parameters& params, const QuantizerSet* quantizers,
                      std::span<const int32_t> tokens) {
  Graph g;
  Graph::NodeId loss = build_nll_graph(g, params, quantizers, tokens);
  // The loss node's input is the logits matmul; rebuilding the graph here
  // just to reach it would be wasteful, so peek one node back: the logits
  // node is created immediately before cross_entropy.
  return g.value(loss - 1);
}

double forward_nll(const Parameters& params, const QuantizerSet* quantizers,
                   std::span<const int32_t> tokens) {
  Graph g;
  Graph::NodeId loss = build_nll_graph(g, params, quantizers, tokens);
  return static_cast<double>(g.value(loss).data[0]);
}

double eval_nll(const Parameters& params, const QuantizerSet* quantizers,
                const TokenDataset& dataset, Split split, int64_t max_blocks) {
  int64_t count = dataset.split_count(split);
  if (max_blocks > 0 && max_blocks < count) count = max_blocks;
  if (count == 0) throw ContractViolation("eval_nll: split has no blocks");
  double total = 0.0;
  for (int64_t i = 0; i < count; ++i) {
    total += forward_nll(params, quantizers, dataset.split_block(split, i));
  }
  return total / static_cast<double>(count);
}

LayerTaps capture_layer_taps(const Parameters& params, const TokenDataset& dataset, TapMode mode,
                             const QuantizerSet* quantizers, int64_t max_blocks) {
  if (mode == TapMode::kSequentialQuantized && quantizers == nullptr) {
    throw ContractViolation("capture_layer_taps: sequential mode needs quantizers");
  }
  const QuantizerSet* applied = mode == TapMode::kSequentialQuantized ? quantizers : nullptr;
  int64_t count = dataset.split_count(Split::kTrain);
  if (max_blocks > 0 && max_blocks < count) count = max_blocks;
  if (count == 0) throw ContractViolation("capture_layer_taps: train split has no blocks");
  LayerTaps taps;
  for (int64_t i = 0; i < count; ++i) {
    Graph g;
    build_nll_graph(g, params, applied, dataset.split_block(Split::kTrain, i), nullptr, &taps);
  }
  return taps;
}

PretrainResult pretrain_base(const ModelConfig& config, const TokenDataset& dataset,
                             const PretrainConfig& pcfg) {
  config.validate();
  if (pcfg.steps <= 0 || pcfg.batch_size <= 0) {
    throw ConfigError("pretrain: steps and batch_size must be positive");
  }
  if (dataset.pretrain_count == 0) throw ContractViolation("pretrain: empty pretrain region");
  Parameters params = init_parameters(config);
  std::set<std::string> all_names;
  for (const std::string& name : parameter_order(config)) all_names.insert(name);
  Rng order(mix_seed(config.seed, kPretrainOrderStream));
  OptimizerState opt;
  TrainConfig adam_cfg;  // default Adam moments; decay handled via the schedule
  PretrainResult result;
  result.params = params;
  result.best_val_nll = eval_nll(params, nullptr, dataset, Split::kVal, pcfg.eval_blocks);
  result.trace.push_back({0, pcfg.lr, 0.0, result.best_val_nll});
  double window_loss = 0.0;
  int64_t window_count = 0;
  for (int64_t step = 0; step < pcfg.steps; ++step) {
    GradientMap batch_grads;
    double batch_loss = 0.0;
    for (int b = 0; b < pcfg.batch_size; ++b) {
      int64_t blk = static_cast<int64_t>(order.below(static_cast<uint64_t>(dataset.pretrain_count)));
      Graph g;
      Graph::NodeId loss =
          build_nll_graph(g, params, nullptr, dataset.split_block(Split::kPretrain, blk), &all_names);
      batch_loss += static_cast<double>(g.value(loss).data[0]);
      GradientMap grads = g.backward(loss);
      if (b == 0) {
        batch_grads = std::move(grads);
      } else {
        batch_grads.accumulate(grads);
      }
    }
    batch_loss /= pcfg.batch_size;
    if (!std::isfinite(batch_loss)) {
      throw TrainingFault("pretrain: loss diverged at step " + std::to_string(step));
    }
    batch_grads.scale_all(1.0f / static_cast<float>(pcfg.batch_size));
    clip_gradients(batch_grads, pcfg.grad_clip);
    double lr = linear_decay(pcfg.lr, step, pcfg.steps);
    adamw_step(params, batch_grads, opt, lr, adam_cfg);
    window_loss += batch_loss;
    ++window_count;
    if ((step + 1) % pcfg.eval_every == 0 || step + 1 == pcfg.steps) {
      double val = eval_nll(params, nullptr, dataset, Split::kVal, pcfg.eval_blocks);
      result.trace.push_back({step + 1, lr, window_loss / window_count, val});
      window_loss = 0.0;
      window_count = 0;
      if (val < result.best_val_nll) {
        result.best_val_nll = val;
        result.params = params;
      }
    }
  }
  return result;
}

int64_t weight_size_bytes(const ModelConfig& config, std::optional<QuantFormat> format) {
  config.validate();
  std::set<std::string> quantized;
  for (const std::string& name : quantized_weight_names(config)) quantized.insert(name);
  int64_t d = config.d_model, ff = config.d_ff;
  auto numel_of = [&](const std::string& name) -> int64_t {
    if (name.ends_with(".wfc1")) return d * ff;
    if (name.ends_with(".wfc2")) return ff * d;
    if (name.ends_with(".bfc1")) return ff;
    if (name.ends_with(".wq") || name.ends_with(".wk") || name.ends_with(".wv") ||
        name.ends_with(".wo")) {
      return d * d;
    }
    return d;  // layernorm gains/shifts and remaining biases
  };
  int64_t total = 0;
  for (const std::string& name : parameter_order(config)) {
    if (name == "tok_emb" || name == "pos_emb" || name == "head") continue;
    int64_t numel = numel_of(name);
    if (format.has_value() && quantized.count(name) > 0) {
      total += (numel * format->bits() + 7) / 8;
    } else {
      total += numel * 4;
    }
  }
  return total;
}

}  // namespace qlab
