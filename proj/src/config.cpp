#include "qlab/config.hpp"

#include <fstream>

#include "qlab/error.hpp"
#include "qlab/quantizer.hpp"

namespace qlab {

namespace {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace

void LandscapeConfig::validate() const {
  if (directions < 1) throw ConfigError("landscape: need at least one direction");
  if (radii < 2) throw ConfigError("landscape: need at least two radii");
  if (segment_samples < 2) throw ConfigError("landscape: need at least two segment samples");
  if (!(rise_fraction > 0.0) || rise_fraction > 1.0) {
    throw ConfigError("landscape: rise_fraction must lie in (0, 1]");
  }
  if (!(plateau_tol > 0.0)) throw ConfigError("landscape: plateau_tol must be positive");
  if (!(radius_min_factor > 0.0) || !(radius_max_factor > radius_min_factor)) {
    throw ConfigError("landscape: radius factors must satisfy 0 < min < max");
  }
  for (const std::string& f : segment_formats) QuantFormat::parse(f);
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config: invalid JSON in " + path);
  return from_json(j);
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.corpus = get_or<std::string>(j, "corpus", c.corpus);
  c.out = get_or<std::string>(j, "out", c.out);
  c.seed = get_or<uint64_t>(j, "seed", c.seed);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.vocab_size = get_or(m, "vocab_size", c.model.vocab_size);
    c.model.seq_len = get_or(m, "seq_len", c.model.seq_len);
    c.model.d_model = get_or(m, "d_model", c.model.d_model);
    c.model.n_heads = get_or(m, "n_heads", c.model.n_heads);
    c.model.n_layers = get_or(m, "n_layers", c.model.n_layers);
    c.model.d_ff = get_or(m, "d_ff", c.model.d_ff);
  }
  c.model.seed = c.seed;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    c.data.train_fraction = get_or(d, "train_fraction", c.data.train_fraction);
    c.data.val_fraction = get_or(d, "val_fraction", c.data.val_fraction);
    c.data.n_calib = get_or(d, "n_calib", c.data.n_calib);
  }
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    c.pretrain.steps = get_or(p, "steps", c.pretrain.steps);
    c.pretrain.batch_size = get_or(p, "batch_size", c.pretrain.batch_size);
    c.pretrain.lr = get_or(p, "lr", c.pretrain.lr);
    c.pretrain.grad_clip = get_or(p, "grad_clip", c.pretrain.grad_clip);
    c.pretrain.eval_every = get_or(p, "eval_every", c.pretrain.eval_every);
    c.pretrain.eval_blocks = get_or(p, "eval_blocks", c.pretrain.eval_blocks);
  }
  c.formats = get_or(j, "formats", c.formats);
  c.methods = get_or(j, "methods", c.methods);
  if (j.contains("gptq")) {
    const auto& g = j.at("gptq");
    c.gptq.damp_grid = get_or(g, "damp_grid", c.gptq.damp_grid);
    c.gptq.sequential_taps = get_or(g, "sequential_taps", c.gptq.sequential_taps);
  }
  if (j.contains("qaft")) {
    const auto& q = j.at("qaft");
    c.qaft.lr_grid = get_or(q, "lr_grid", c.qaft.lr_grid);
    c.qaft.epochs = get_or(q, "epochs", c.qaft.epochs);
    c.qaft.batch_size = get_or(q, "batch_size", c.qaft.batch_size);
    c.qaft.beta1 = get_or(q, "beta1", c.qaft.beta1);
    c.qaft.beta2 = get_or(q, "beta2", c.qaft.beta2);
    c.qaft.adam_eps = get_or(q, "adam_eps", c.qaft.adam_eps);
    c.qaft.weight_decay = get_or(q, "weight_decay", c.qaft.weight_decay);
    c.qaft.grad_clip = get_or(q, "grad_clip", c.qaft.grad_clip);
    c.qaft.eval_blocks = get_or(q, "eval_blocks", c.qaft.eval_blocks);
    c.qaft.trace_test_nll = get_or(q, "trace_test_nll", c.qaft.trace_test_nll);
  }
  if (j.contains("landscape")) {
    const auto& l = j.at("landscape");
    c.landscape.directions = get_or(l, "directions", c.landscape.directions);
    c.landscape.radii = get_or(l, "radii", c.landscape.radii);
    c.landscape.segment_samples = get_or(l, "segment_samples", c.landscape.segment_samples);
    c.landscape.segment_formats = get_or(l, "segment_formats", c.landscape.segment_formats);
    c.landscape.train_blocks = get_or(l, "train_blocks", c.landscape.train_blocks);
    c.landscape.val_blocks = get_or(l, "val_blocks", c.landscape.val_blocks);
    c.landscape.rise_fraction = get_or(l, "rise_fraction", c.landscape.rise_fraction);
    c.landscape.plateau_tol = get_or(l, "plateau_tol", c.landscape.plateau_tol);
    c.landscape.radius_min_factor = get_or(l, "radius_min_factor", c.landscape.radius_min_factor);
    c.landscape.radius_max_factor = get_or(l, "radius_max_factor", c.landscape.radius_max_factor);
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["corpus"] = corpus;
  j["out"] = out;
  j["seed"] = seed;
  j["model"] = {{"vocab_size", model.vocab_size}, {"seq_len", model.seq_len},
                {"d_model", model.d_model},       {"n_heads", model.n_heads},
                {"n_layers", model.n_layers},     {"d_ff", model.d_ff}};
  j["data"] = {{"train_fraction", data.train_fraction},
               {"val_fraction", data.val_fraction},
               {"n_calib", data.n_calib}};
  j["pretrain"] = {{"steps", pretrain.steps},       {"batch_size", pretrain.batch_size},
                   {"lr", pretrain.lr},             {"grad_clip", pretrain.grad_clip},
                   {"eval_every", pretrain.eval_every}, {"eval_blocks", pretrain.eval_blocks}};
  j["formats"] = formats;
  j["methods"] = methods;
  j["gptq"] = {{"damp_grid", gptq.damp_grid}, {"sequential_taps", gptq.sequential_taps}};
  j["qaft"] = {{"lr_grid", qaft.lr_grid},
               {"epochs", qaft.epochs},
               {"batch_size", qaft.batch_size},
               {"beta1", qaft.beta1},
               {"beta2", qaft.beta2},
               {"adam_eps", qaft.adam_eps},
               {"weight_decay", qaft.weight_decay},
               {"grad_clip", qaft.grad_clip},
               {"eval_blocks", qaft.eval_blocks},
               {"trace_test_nll", qaft.trace_test_nll}};
  j["landscape"] = {{"directions", landscape.directions},
                    {"radii", landscape.radii},
                    {"segment_samples", landscape.segment_samples},
                    {"segment_formats", landscape.segment_formats},
                    {"train_blocks", landscape.train_blocks},
                    {"val_blocks", landscape.val_blocks},
                    {"rise_fraction", landscape.rise_fraction},
                    {"plateau_tol", landscape.plateau_tol},
                    {"radius_min_factor", landscape.radius_min_factor},
                    {"radius_max_factor", landscape.radius_max_factor}};
  return j;
}

std::string RunConfig::hash() const {
  std::string dump = to_json().dump();
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

void RunConfig::validate() const {
  if (corpus.empty()) throw ConfigError("config: corpus path is required");
  if (out.empty()) throw ConfigError("config: output directory is required");
  model.validate();
  data.validate();
  if (model.seed != seed) throw ConfigError("config: model seed must mirror the run seed");
  if (formats.empty()) throw ConfigError("config: at least one format is required");
  for (const std::string& f : formats) QuantFormat::parse(f);
  if (methods.empty()) throw ConfigError("config: at least one method is required");
  for (const std::string& m : methods) {
    if (m != "rtn" && m != "gptq" && m != "qaft") throw ConfigError("config: unknown method " + m);
  }
  DampSearchSpace{gptq.damp_grid}.validate();
  qaft.validate();
  landscape.validate();
  if (pretrain.steps <= 0 || pretrain.batch_size <= 0 || !(pretrain.lr > 0.0)) {
    throw ConfigError("config: pretrain steps, batch size and lr must be positive");
  }
}

}  // namespace qlab
