#include "qlab/runner.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "qlab/checkpoint.hpp"
#include "qlab/corpus.hpp"
#include "qlab/csv.hpp"
#include "qlab/error.hpp"
#include "qlab/gptq.hpp"
#include "qlab/landscape.hpp"
#include "qlab/lm.hpp"
#include "qlab/qaft.hpp"
#include "qlab/rng.hpp"

namespace qlab {

namespace {

namespace fs = std::filesystem;

constexpr uint64_t kDirectionStreamBase = 1000;

std::string join(const RunConfig& cfg, const std::string& leaf) {
  return (fs::path(cfg.out) / leaf).string();
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << j.dump(1) << "\n";
  out.flush();
  if (!out) throw DataError("write failure on " + path);
}

nlohmann::json read_json(const std::string& path, const std::string& hint) {
  std::ifstream in(path);
  if (!in) throw DataError("missing artifact " + path + "; run `" + hint + "` first");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("corrupt JSON artifact " + path);
  return j;
}

TokenDataset load_dataset(const RunConfig& cfg) {
  return ingest_corpus(cfg.corpus, cfg.model.seq_len, cfg.data);
}

Parameters load_base(const RunConfig& cfg) {
  std::string path = base_checkpoint_path(cfg);
  if (!fs::exists(path)) {
    throw DataError("missing base checkpoint " + path + "; run `train-base` first");
  }
  return load_checkpoint(path);
}

std::vector<std::string> formats_or_default(const RunConfig& cfg,
                                            const std::vector<std::string>& formats) {
  if (formats.empty()) return cfg.formats;
  for (const std::string& f : formats) QuantFormat::parse(f);
  return formats;
}

std::string quantizers_path(const RunConfig& cfg, const std::string& method,
                            const std::string& format) {
  return join(cfg, "quantizers_" + method + "_" + format + ".json");
}

void save_quantizers(const std::string& path, const QuantizerSet& set) {
  nlohmann::json j;
  for (const auto& [name, q] : set) {
    j[name] = {{"bits", q.format.bits()}, {"scale", q.scale}};
  }
  write_json(path, j);
}

QuantizerSet load_quantizers(const std::string& path, const std::string& hint) {
  nlohmann::json j = read_json(path, hint);
  QuantizerSet set;
  for (auto it = j.begin(); it != j.end(); ++it) {
    QuantFormat f(it.value().at("bits").get<int>());
    set.insert({it.key(), CalibratedQuantizer{f, it.value().at("scale").get<float>()}});
  }
  return set;
}

bool has_method(const RunConfig& cfg, const std::string& method) {
  for (const std::string& m : cfg.methods) {
    if (m == method) return true;
  }
  return false;
}

uint64_t fnv1a_bytes(const std::string& bytes) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

std::string base_checkpoint_path(const RunConfig& cfg) { return join(cfg, "base_fp.ckpt"); }

std::string method_checkpoint_path(const RunConfig& cfg, const std::string& method,
                                   const std::string& format) {
  return join(cfg, "ckpt_" + method + "_" + format + ".ckpt");
}

void run_prep(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out);
  std::ifstream in(cfg.corpus, std::ios::binary);
  if (!in) throw DataError("dataset: cannot open corpus file " + cfg.corpus);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  TokenDataset ds = ingest_text(bytes, cfg.model.seq_len, cfg.data);
  nlohmann::json j;
  j["config_hash"] = cfg.hash();
  j["corpus_bytes"] = bytes.size();
  j["corpus_fnv1a"] = fnv1a_bytes(bytes);
  j["seq_len"] = ds.seq_len;
  j["n_blocks"] = ds.n_blocks;
  j["splits"] = {{"train", ds.train_count},
                 {"pretrain", ds.pretrain_count},
                 {"val", ds.val_count},
                 {"test", ds.test_count}};
  write_json(join(cfg, "dataset_summary.json"), j);
}

void run_train_base(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out);
  TokenDataset ds = load_dataset(cfg);
  PretrainResult res = pretrain_base(cfg.model, ds, cfg.pretrain);
  save_checkpoint(res.params, base_checkpoint_path(cfg));
  CsvWriter trace(join(cfg, "pretrain_trace.csv"), cfg.hash(),
                  {"step", "lr", "train_loss", "val_nll"});
  for (const PretrainTraceRow& row : res.trace) {
    trace.row({fmt_num(row.step), fmt_num(row.lr), fmt_num(row.train_loss), fmt_num(row.val_nll)});
  }
  trace.close();
}

void run_quantize(const RunConfig& cfg, const std::string& method,
                  const std::vector<std::string>& formats) {
  cfg.validate();
  if (method != "rtn" && method != "gptq") {
    throw ConfigError("quantize: method must be rtn or gptq, got " + method);
  }
  Parameters base = load_base(cfg);
  TokenDataset ds = load_dataset(cfg);
  for (const std::string& fname : formats_or_default(cfg, formats)) {
    QuantFormat format = QuantFormat::parse(fname);
    if (method == "rtn") {
      QuantizerSet set;
      Parameters quant = quantize_model_rtn(base, format, &set);
      save_checkpoint(quant, method_checkpoint_path(cfg, "rtn", fname));
      save_quantizers(quantizers_path(cfg, "rtn", fname), set);
    } else {
      DampSearchSpace grid{cfg.gptq.damp_grid};
      TapMode mode = cfg.gptq.sequential_taps ? TapMode::kSequentialQuantized
                                              : TapMode::kFullPrecision;
      GptqResult res = gptq_quantize_model(base, ds, grid, format, mode);
      save_checkpoint(res.params, method_checkpoint_path(cfg, "gptq", fname));
      save_quantizers(quantizers_path(cfg, "gptq", fname), res.quantizers);
      nlohmann::json rows = nlohmann::json::array();
      for (const GptqLayerReport& r : res.report) {
        rows.push_back({{"layer", r.layer},
                        {"chosen_factor", r.chosen_factor},
                        {"rtn_selected", r.rtn_selected},
                        {"cholesky_fallback", r.cholesky_fallback},
                        {"mse_rtn", r.mse_rtn},
                        {"mse_selected", r.mse_selected}});
      }
      write_json(join(cfg, "gptq_report_" + fname + ".json"),
                 nlohmann::json{{"format", fname}, {"layers", rows}});
    }
  }
}

void run_qaft(const RunConfig& cfg, const std::vector<std::string>& formats) {
  cfg.validate();
  Parameters base = load_base(cfg);
  TokenDataset ds = load_dataset(cfg);
  for (const std::string& fname : formats_or_default(cfg, formats)) {
    QuantFormat format = QuantFormat::parse(fname);
    QuantizerSet set = calibrate_model(base, format);
    QaftResult res = qaft_train(base, set, ds, cfg.qaft, cfg.seed);
    // The deployable model is the on-grid image of the tuned weights.
    Parameters deployed = apply_quantizers(res.params, set);
    save_checkpoint(deployed, method_checkpoint_path(cfg, "qaft", fname));
    save_quantizers(quantizers_path(cfg, "qaft", fname), set);
    nlohmann::json rows = nlohmann::json::array();
    for (const QaftTraceRow& r : res.trace) {
      nlohmann::json row = {{"lr", r.lr},
                            {"epoch", r.epoch},
                            {"train_nll", r.train_nll},
                            {"val_nll", r.val_nll}};
      if (r.test_nll >= 0.0) row["test_nll"] = r.test_nll;
      rows.push_back(std::move(row));
    }
    write_json(join(cfg, "qaft_result_" + fname + ".json"),
               nlohmann::json{{"format", fname},
                              {"best_lr", res.best_lr},
                              {"best_epoch", res.best_epoch},
                              {"best_val_nll", res.best_val_nll},
                              {"failed_lrs", res.failed_lrs},
                              {"trace", rows}});
  }
}

void run_eval(const RunConfig& cfg) {
  cfg.validate();
  Parameters base = load_base(cfg);
  TokenDataset ds = load_dataset(cfg);
  // Every method is scored against the same calibration activations the
  // quantizers saw, so per-layer errors are comparable across methods.
  LayerTaps taps = capture_layer_taps(base, ds, TapMode::kFullPrecision);

  nlohmann::json fp;
  fp["train_nll"] = eval_nll(base, nullptr, ds, Split::kTrain);
  fp["test_nll"] = eval_nll(base, nullptr, ds, Split::kTest);
  fp["weight_bytes"] = weight_size_bytes(cfg.model, std::nullopt);
  write_json(join(cfg, "eval_fp.json"), fp);

  for (const std::string& method : cfg.methods) {
    for (const std::string& fname : cfg.formats) {
      std::string ckpt = method_checkpoint_path(cfg, method, fname);
      if (!fs::exists(ckpt)) {
        std::string hint = method == "qaft" ? "qaft" : "quantize --method " + method;
        throw DataError("missing checkpoint " + ckpt + "; run `" + hint + "` first");
      }
      Parameters quant = load_checkpoint(ckpt);
      nlohmann::json j;
      j["method"] = method;
      j["format"] = fname;
      j["train_nll"] = eval_nll(quant, nullptr, ds, Split::kTrain);
      j["test_nll"] = eval_nll(quant, nullptr, ds, Split::kTest);
      j["weight_bytes"] = weight_size_bytes(cfg.model, QuantFormat::parse(fname));
      nlohmann::json mse;
      for (const std::string& layer : quantized_weight_names(cfg.model)) {
        mse[layer] = layer_mse(quant.at(layer), base.at(layer), taps.at(layer));
      }
      j["layer_mse"] = std::move(mse);
      write_json(join(cfg, "eval_" + method + "_" + fname + ".json"), j);
    }
  }
}

void run_landscape(const RunConfig& cfg) {
  cfg.validate();
  Parameters base = load_base(cfg);
  TokenDataset ds = load_dataset(cfg);
  std::vector<float> w0 = flatten_quantized(base);
  LandscapeEvalConfig eval{cfg.landscape.train_blocks, cfg.landscape.val_blocks};

  // Round-to-nearest displacements set the radius sweep bounds.
  std::map<std::string, double> rtn_distance;
  for (const std::string& fname : cfg.formats) {
    std::string ckpt = method_checkpoint_path(cfg, "rtn", fname);
    if (!fs::exists(ckpt)) {
      throw DataError("missing checkpoint " + ckpt + "; run `quantize --method rtn` first");
    }
    rtn_distance[fname] = weight_distance(w0, flatten_quantized(load_checkpoint(ckpt)));
  }
  double dist_min = rtn_distance.begin()->second, dist_max = dist_min;
  for (const auto& [fname, d] : rtn_distance) {
    dist_min = std::min(dist_min, d);
    dist_max = std::max(dist_max, d);
  }
  std::vector<double> radii =
      log_spaced_radii(cfg.landscape.radius_min_factor * dist_min,
                       cfg.landscape.radius_max_factor * dist_max, cfg.landscape.radii);

  std::vector<LossProfile> radial;
  for (int i = 0; i < cfg.landscape.directions; ++i) {
    Direction dir = sample_unit_direction(static_cast<int64_t>(w0.size()),
                                          mix_seed(cfg.seed, kDirectionStreamBase + static_cast<uint64_t>(i)));
    radial.push_back(radial_profile(base, dir, radii, ds, eval));
  }
  BasinRule rule{cfg.landscape.rise_fraction, cfg.landscape.plateau_tol, 0.2};
  BasinEstimate basin = basin_radius(radial, rule);

  std::vector<double> ts;
  for (int i = 0; i < cfg.landscape.segment_samples; ++i) {
    ts.push_back(static_cast<double>(i) / (cfg.landscape.segment_samples - 1));
  }
  ts.back() = 1.0;
  std::vector<LossProfile> segments;
  for (const std::string& fname : cfg.landscape.segment_formats) {
    for (const std::string& method : cfg.methods) {
      std::string ckpt = method_checkpoint_path(cfg, method, fname);
      if (!fs::exists(ckpt)) {
        std::string hint = method == "qaft" ? "qaft" : "quantize --method " + method;
        throw DataError("missing checkpoint " + ckpt + "; run `" + hint + "` first");
      }
      std::vector<float> wb = flatten_quantized(load_checkpoint(ckpt));
      segments.push_back(
          segment_profile(base, w0, wb, "w", method + "_" + fname, ts, ds, eval));
    }
  }

  auto samples_to_json = [](const LossProfile& p) {
    nlohmann::json rows = nlohmann::json::array();
    for (const LossSample& s : p.samples) {
      rows.push_back({{"t_or_lambda", s.t_or_lambda},
                      {"distance", s.distance},
                      {"train_nll", s.train_nll},
                      {"val_nll", s.val_nll}});
    }
    return rows;
  };
  nlohmann::json j;
  j["config_hash"] = cfg.hash();
  j["rtn_distance"] = rtn_distance;
  j["basin"] = {{"base_loss", basin.base_loss},
                {"plateau_loss", basin.plateau_loss},
                {"radius", basin.radius}};
  nlohmann::json jr = nlohmann::json::array();
  for (const LossProfile& p : radial) {
    jr.push_back({{"seed", p.seed}, {"samples", samples_to_json(p)}});
  }
  j["radial"] = std::move(jr);
  nlohmann::json js = nlohmann::json::array();
  for (const LossProfile& p : segments) {
    js.push_back({{"anchor_a", p.anchor_a}, {"anchor_b", p.anchor_b},
                  {"samples", samples_to_json(p)}});
  }
  j["segments"] = std::move(js);
  write_json(join(cfg, "landscape_profiles.json"), j);
}

void run_report(const RunConfig& cfg) {
  cfg.validate();
  std::string hash = cfg.hash();
  nlohmann::json fp = read_json(join(cfg, "eval_fp.json"), "eval");

  {
    CsvWriter mis(join(cfg, "misalignment.csv"), hash,
                  {"format", "method", "kind", "layer", "value"});
    mis.row({"fp32", "fp", "global_nll", "", fmt_num(fp.at("test_nll").get<double>())});
    for (const std::string& fname : cfg.formats) {
      for (const std::string& method : cfg.methods) {
        nlohmann::json e = read_json(join(cfg, "eval_" + method + "_" + fname + ".json"), "eval");
        mis.row({fname, method, "global_nll", "", fmt_num(e.at("test_nll").get<double>())});
        const auto& mse = e.at("layer_mse");
        for (const std::string& layer : quantized_weight_names(cfg.model)) {
          mis.row({fname, method, "layer_mse", layer, fmt_num(mse.at(layer).get<double>())});
        }
      }
    }
    mis.close();
  }

  {
    CsvWriter trade(join(cfg, "tradeoff.csv"), hash,
                    {"format", "method", "weight_bytes", "test_nll"});
    trade.row({"fp32", "fp", fmt_num(fp.at("weight_bytes").get<int64_t>()),
               fmt_num(fp.at("test_nll").get<double>())});
    for (const std::string& fname : cfg.formats) {
      for (const std::string& method : cfg.methods) {
        nlohmann::json e = read_json(join(cfg, "eval_" + method + "_" + fname + ".json"), "eval");
        trade.row({fname, method, fmt_num(e.at("weight_bytes").get<int64_t>()),
                   fmt_num(e.at("test_nll").get<double>())});
      }
    }
    trade.close();
  }

  if (has_method(cfg, "qaft")) {
    CsvWriter qt(join(cfg, "qaft_trace.csv"), hash,
                 {"format", "lr", "epoch", "train_nll", "val_nll", "test_nll"});
    for (const std::string& fname : cfg.formats) {
      nlohmann::json r = read_json(join(cfg, "qaft_result_" + fname + ".json"), "qaft");
      for (const auto& row : r.at("trace")) {
        std::string test = row.contains("test_nll") ? fmt_num(row.at("test_nll").get<double>()) : "";
        qt.row({fname, fmt_num(row.at("lr").get<double>()),
                fmt_num(row.at("epoch").get<int64_t>()),
                fmt_num(row.at("train_nll").get<double>()),
                fmt_num(row.at("val_nll").get<double>()), test});
      }
    }
    qt.close();
  }

  if (has_method(cfg, "gptq")) {
    CsvWriter gd(join(cfg, "gptq_damp.csv"), hash,
                 {"format", "layer", "chosen_factor", "cholesky_fallback", "mse_rtn",
                  "mse_gptq"});
    for (const std::string& fname : cfg.formats) {
      nlohmann::json r = read_json(join(cfg, "gptq_report_" + fname + ".json"),
                                   "quantize --method gptq");
      for (const auto& row : r.at("layers")) {
        bool rtn_sel = row.at("rtn_selected").get<bool>();
        gd.row({fname, row.at("layer").get<std::string>(),
                rtn_sel ? "rtn" : fmt_num(row.at("chosen_factor").get<double>()),
                row.at("cholesky_fallback").get<bool>() ? "1" : "0",
                fmt_num(row.at("mse_rtn").get<double>()),
                fmt_num(row.at("mse_selected").get<double>())});
      }
    }
    gd.close();
  }

  {
    nlohmann::json l = read_json(join(cfg, "landscape_profiles.json"), "landscape");
    CsvWriter ls(join(cfg, "landscape.csv"), hash,
                 {"kind", "anchor_a", "anchor_b", "seed", "t_or_lambda", "distance",
                  "train_nll", "val_nll"});
    for (const auto& p : l.at("radial")) {
      for (const auto& s : p.at("samples")) {
        ls.row({"radial", "w", "", fmt_num(p.at("seed").get<int64_t>()),
                fmt_num(s.at("t_or_lambda").get<double>()),
                fmt_num(s.at("distance").get<double>()),
                fmt_num(s.at("train_nll").get<double>()),
                fmt_num(s.at("val_nll").get<double>())});
      }
    }
    for (const auto& p : l.at("segments")) {
      for (const auto& s : p.at("samples")) {
        ls.row({"segment", p.at("anchor_a").get<std::string>(),
                p.at("anchor_b").get<std::string>(), "",
                fmt_num(s.at("t_or_lambda").get<double>()),
                fmt_num(s.at("distance").get<double>()),
                fmt_num(s.at("train_nll").get<double>()),
                fmt_num(s.at("val_nll").get<double>())});
      }
    }
    ls.close();
  }
}

void run_all(const RunConfig& cfg) {
  run_prep(cfg);
  run_train_base(cfg);
  if (has_method(cfg, "rtn")) run_quantize(cfg, "rtn");
  if (has_method(cfg, "gptq")) run_quantize(cfg, "gptq");
  if (has_method(cfg, "qaft")) run_qaft(cfg);
  run_eval(cfg);
  run_landscape(cfg);
  run_report(cfg);
}

}  // namespace qlab
