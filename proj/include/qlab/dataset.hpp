#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qlab {

enum class Split { kTrain, kPretrain, kVal, kTest };

struct DataConfig {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  // Calibration budget: the train split is truncated to this many blocks.
  int64_t n_calib = 128;

  void validate() const;  // throws ConfigError
  bool operator==(const DataConfig& o) const = default;
};

// Byte-level token stream packed into contiguous fixed-length blocks.
//
// Block order follows the corpus: [pretrain region | validation | test]. The
// train split handed to quantization procedures is the first n_calib blocks
// of the pretrain region; pretrain_base is the only consumer of the full
// region. All splits are therefore contiguous, and train/val/test never
// overlap.
class TokenDataset {
 public:
  static constexpr int32_t kPadId = 256;  // reserved, never produced by ingestion

  int seq_len = 0;
  std::vector<int32_t> tokens;
  int64_t n_blocks = 0;
  int64_t pretrain_count = 0;
  int64_t train_count = 0;  // <= pretrain_count
  int64_t val_begin = 0;
  int64_t val_count = 0;
  int64_t test_begin = 0;
  int64_t test_count = 0;

  std::span<const int32_t> block(int64_t index) const;  // global block index
  int64_t split_count(Split s) const;
  std::span<const int32_t> split_block(Split s, int64_t i) const;
};

// Reads a corpus file as raw bytes and packs it into blocks. Fails with
// DataError when the file is unreadable or too small to fill every split.
TokenDataset ingest_corpus(const std::string& path, int seq_len, const DataConfig& config);

// Same, from an in-memory byte string.
TokenDataset ingest_text(std::string_view text, int seq_len, const DataConfig& config);

}  // namespace qlab
