#include "qlab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "qlab/error.hpp"

namespace qlab {

namespace {

constexpr char kMagic[8] = {'Q', 'L', 'A', 'B', 'C', 'K', 'P', '1'};

nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"vocab_size", c.vocab_size}, {"seq_len", c.seq_len},
                        {"d_model", c.d_model},       {"n_heads", c.n_heads},
                        {"n_layers", c.n_layers},     {"d_ff", c.d_ff},
                        {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const Parameters& params, const std::string& path) {
  nlohmann::json manifest;
  manifest["config"] = config_to_json(params.config);
  nlohmann::json index = nlohmann::json::array();
  int64_t offset = 0;
  for (const std::string& name : parameter_order(params.config)) {
    const Tensor& t = params.at(name);
    index.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.numel() * static_cast<int64_t>(sizeof(float));
  }
  manifest["tensors"] = std::move(index);
  std::string header = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  uint64_t len = header.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((len >> (8 * i)) & 0xff);
  out.write(lenbuf, 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const std::string& name : parameter_order(params.config)) {
    const Tensor& t = params.at(name);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  out.flush();
  if (!out) throw DataError("checkpoint: write failure on " + path);
}

Parameters load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("checkpoint: bad magic in " + path);
  }
  char lenbuf[8];
  in.read(lenbuf, 8);
  if (!in) throw DataError("checkpoint: truncated header in " + path);
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) {
    len |= static_cast<uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
  }
  if (len == 0 || len > (1ull << 30)) throw DataError("checkpoint: absurd manifest size in " + path);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint: truncated manifest in " + path);
  nlohmann::json manifest = nlohmann::json::parse(header, nullptr, false);
  if (manifest.is_discarded()) throw DataError("checkpoint: corrupt manifest in " + path);

  Parameters params;
  try {
    params.config = config_from_json(manifest.at("config"));
    params.config.validate();
    const auto& index = manifest.at("tensors");
    std::vector<std::string> expected = parameter_order(params.config);
    if (index.size() != expected.size()) {
      throw DataError("checkpoint: manifest tensor count mismatch in " + path);
    }
    int64_t offset = 0;
    for (size_t i = 0; i < expected.size(); ++i) {
      const auto& entry = index.at(i);
      std::string name = entry.at("name").get<std::string>();
      std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
      int64_t declared = entry.at("offset").get<int64_t>();
      if (name != expected[i] || declared != offset) {
        throw DataError("checkpoint: manifest order or offsets corrupt in " + path);
      }
      Tensor t(shape);
      in.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
      if (!in) throw DataError("checkpoint: blob shorter than the manifest promises in " + path);
      offset += t.numel() * static_cast<int64_t>(sizeof(float));
      params.tensors[name] = std::move(t);
    }
  } catch (const nlohmann::json::exception&) {
    throw DataError("checkpoint: manifest fields missing or mistyped in " + path);
  }
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw DataError("checkpoint: trailing bytes after the blob in " + path);
  }
  return params;
}

}  // namespace qlab
