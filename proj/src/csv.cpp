#include "qlab/csv.hpp"

#include <charconv>
#include <cmath>

#include "qlab/error.hpp"

namespace qlab {

std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ContractViolation("fmt_num: conversion failed");
  return std::string(buf, ptr);
}

std::string fmt_num(int64_t v) { return std::to_string(v); }

CsvWriter::CsvWriter(const std::string& path, const std::string& config_hash,
                     const std::vector<std::string>& header)
    : out_(path, std::ios::trunc), path_(path), columns_(header.size()) {
  if (!out_) throw DataError("csv: cannot open " + path + " for writing");
  if (header.empty()) throw ContractViolation("csv: empty header");
  out_ << "# config_hash=" << config_hash << "\n";
  row(header);
}

CsvWriter::~CsvWriter() {
  if (out_.is_open()) out_.flush();
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != columns_) {
    throw ContractViolation("csv: row width does not match the header in " + path_);
  }
  for (size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].find_first_of(",\n\"") != std::string::npos) {
      throw ContractViolation("csv: field needs quoting, which this writer does not do");
    }
    if (i) out_ << ',';
    out_ << fields[i];
  }
  out_ << '\n';
}

void CsvWriter::close() {
  out_.flush();
  if (!out_) throw DataError("csv: write failure on " + path_);
  out_.close();
}

}  // namespace qlab
