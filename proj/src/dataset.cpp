#include "qlab/dataset.hpp"

#include <fstream>

#include "qlab/error.hpp"

namespace qlab {

void DataConfig::validate() const {
  if (!(train_fraction > 0.0) || !(val_fraction > 0.0) ||
      !(train_fraction + val_fraction < 1.0)) {
    throw ConfigError("data: fractions must be positive and sum to less than 1");
  }
  if (n_calib <= 0) throw ConfigError("data: n_calib must be positive");
}

std::span<const int32_t> TokenDataset::block(int64_t index) const {
  if (index < 0 || index >= n_blocks) throw ContractViolation("dataset: block index out of range");
  return std::span<const int32_t>(tokens.data() + index * seq_len, static_cast<size_t>(seq_len));
}

int64_t TokenDataset::split_count(Split s) const {
  switch (s) {
    case Split::kTrain:
      return train_count;
    case Split::kPretrain:
      return pretrain_count;
    case Split::kVal:
      return val_count;
    case Split::kTest:
      return test_count;
  }
  throw ContractViolation("dataset: unknown split");
}

std::span<const int32_t> TokenDataset::split_block(Split s, int64_t i) const {
  if (i < 0 || i >= split_count(s)) throw ContractViolation("dataset: split block index out of range");
  switch (s) {
    case Split::kTrain:
    case Split::kPretrain:
      return block(i);
    case Split::kVal:
      return block(val_begin + i);
    case Split::kTest:
      return block(test_begin + i);
  }
  throw ContractViolation("dataset: unknown split");
}

TokenDataset ingest_text(std::string_view text, int seq_len, const DataConfig& config) {
  if (seq_len < 2) throw ConfigError("dataset: seq_len must be at least 2");
  config.validate();
  TokenDataset ds;
  ds.seq_len = seq_len;
  ds.n_blocks = static_cast<int64_t>(text.size()) / seq_len;  // trailing remainder dropped
  int64_t pretrain = static_cast<int64_t>(static_cast<double>(ds.n_blocks) * config.train_fraction);
  int64_t val = static_cast<int64_t>(static_cast<double>(ds.n_blocks) * config.val_fraction);
  int64_t test = ds.n_blocks - pretrain - val;
  if (pretrain < config.n_calib || val < 1 || test < 1) {
    throw DataError("dataset: corpus too small to fill every split at this block size");
  }
  ds.tokens.resize(static_cast<size_t>(ds.n_blocks) * seq_len);
  for (int64_t i = 0; i < ds.n_blocks * seq_len; ++i) {
    ds.tokens[static_cast<size_t>(i)] =
        static_cast<int32_t>(static_cast<unsigned char>(text[static_cast<size_t>(i)]));
  }
  ds.pretrain_count = pretrain;
  ds.train_count = config.n_calib;
  ds.val_begin = pretrain;
  ds.val_count = val;
  ds.test_begin = pretrain + val;
  ds.test_count = test;
  return ds;
}

TokenDataset ingest_corpus(const std::string& path, int seq_len, const DataConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("dataset: cannot open corpus file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw DataError("dataset: read failure on corpus file " + path);
  return ingest_text(text, seq_len, config);
}

}  // namespace qlab
