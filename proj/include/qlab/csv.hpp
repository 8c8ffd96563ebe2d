#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace qlab {

// Shortest decimal string that parses back to exactly the same double.
std::string fmt_num(double v);
std::string fmt_num(int64_t v);

// Comma-separated report writer. Every file starts with a config-hash comment
// and a header row; row() enforces the column count.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& config_hash,
            const std::vector<std::string>& header);
  ~CsvWriter();

  void row(const std::vector<std::string>& fields);
  void close();  // flush and fail loudly on write errors

 private:
  std::ofstream out_;
  std::string path_;
  size_t columns_;
};

}  // namespace qlab
