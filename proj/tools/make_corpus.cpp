#include <cstdio>
#include <exception>
#include <fstream>
#include <string>

#include "CLI11.hpp"
#include "qlab/corpus.hpp"

int main(int argc, char** argv) {
  CLI::App app{"deterministic synthetic text corpus generator"};
  std::string out;
  int64_t bytes = 1 << 20;
  uint64_t seed = 1;
  app.add_option("--out", out, "output file path")->required();
  app.add_option("--bytes", bytes, "corpus size in bytes")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    std::string text = qlab::generate_corpus(bytes, seed);
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + out + " for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    f.flush();
    if (!f) throw std::runtime_error("write failure on " + out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
