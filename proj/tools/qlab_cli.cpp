#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qlab/config.hpp"
#include "qlab/runner.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_override;
  uint64_t seed_override = 0;
  bool seed_set = false;
};

qlab::RunConfig load_config(const CliOptions& opt) {
  qlab::RunConfig cfg = qlab::RunConfig::from_file(opt.config_path);
  if (opt.seed_set) {
    cfg.seed = opt.seed_override;
    cfg.model.seed = opt.seed_override;
  }
  if (!opt.out_override.empty()) cfg.out = opt.out_override;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantization laboratory for a byte-level transformer LM"};
  app.require_subcommand(1);

  CliOptions opt;
  app.add_option("--config", opt.config_path, "path to the run config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--seed", opt.seed_override, "override the run seed")
      ->each([&opt](const std::string&) { opt.seed_set = true; });
  app.add_option("--out", opt.out_override, "override the output directory");

  auto* prep = app.add_subcommand("prep-data", "tokenize the corpus and write split summary");
  auto* train = app.add_subcommand("train-base", "pretrain the full-precision base model");

  auto* quantize = app.add_subcommand("quantize", "post-training quantization of the base model");
  std::string method;
  std::vector<std::string> formats;
  quantize->add_option("--method", method, "rtn or gptq")->required();
  quantize->add_option("--format", formats, "format subset, e.g. int4 (default: all)");

  auto* qaft = app.add_subcommand("qaft", "quantization-aware fine-tuning");
  std::vector<std::string> qaft_formats;
  qaft->add_option("--format", qaft_formats, "format subset, e.g. int4 (default: all)");

  auto* eval = app.add_subcommand("eval", "score every checkpoint on the held-out splits");
  auto* landscape = app.add_subcommand("landscape", "loss landscape probes around the base model");
  auto* report = app.add_subcommand("report", "aggregate artifacts into the final CSV tables");
  auto* all = app.add_subcommand("all", "run the whole pipeline in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    qlab::RunConfig cfg = load_config(opt);
    if (prep->parsed()) qlab::run_prep(cfg);
    if (train->parsed()) qlab::run_train_base(cfg);
    if (quantize->parsed()) qlab::run_quantize(cfg, method, formats);
    if (qaft->parsed()) qlab::run_qaft(cfg, qaft_formats);
    if (eval->parsed()) qlab::run_eval(cfg);
    if (landscape->parsed()) qlab::run_landscape(cfg);
    if (report->parsed()) qlab::run_report(cfg);
    if (all->parsed()) qlab::run_all(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
