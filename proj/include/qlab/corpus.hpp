#pragma once

#include <cstdint>
#include <string>

namespace qlab {

// Deterministic synthetic English-like text: templated sentences over fixed
// word lists, grouped into paragraphs. The grammar gives byte-level structure
// a small model can learn while leaving enough choice entropy that damaged
// weights show up clearly in NLL. Exactly `bytes` characters are returned.
std::string generate_corpus(int64_t bytes, uint64_t seed);

}  // namespace qlab
