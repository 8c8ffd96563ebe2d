#pragma once

#include <string>
#include <vector>

#include "qlab/config.hpp"

namespace qlab {

// One stage per CLI subcommand, each reading its inputs from cfg.out and
// leaving its artifacts there, so stages can be rerun independently. An empty
// `formats` argument means every format in the config.

void run_prep(const RunConfig& cfg);
void run_train_base(const RunConfig& cfg);
void run_quantize(const RunConfig& cfg, const std::string& method,
                  const std::vector<std::string>& formats = {});
void run_qaft(const RunConfig& cfg, const std::vector<std::string>& formats = {});
void run_eval(const RunConfig& cfg);
void run_landscape(const RunConfig& cfg);
void run_report(const RunConfig& cfg);

// prep, train-base, quantize (rtn and gptq), qaft, eval, landscape, report.
void run_all(const RunConfig& cfg);

// Artifact locations under cfg.out, shared by the stages and the tests.
std::string base_checkpoint_path(const RunConfig& cfg);
std::string method_checkpoint_path(const RunConfig& cfg, const std::string& method,
                                   const std::string& format);

}  // namespace qlab
