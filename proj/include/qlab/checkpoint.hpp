#pragma once

#include <string>

#include "qlab/model.hpp"

namespace qlab {

// Checkpoint layout: 8 magic bytes, a little-endian u64 manifest length, a
// JSON manifest (model config plus a tensor index with name, shape and blob
// byte offset in canonical parameter order), then the raw little-endian
// float32 blob. Floats are copied bit for bit, so save followed by load
// reproduces the parameters exactly.
void save_checkpoint(const Parameters& params, const std::string& path);

// Throws DataError on missing files, bad magic, manifest/blob size
// disagreement, or a manifest that does not match its own config.
Parameters load_checkpoint(const std::string& path);

}  // namespace qlab
