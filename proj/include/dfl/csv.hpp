#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "dfl/common.hpp"

namespace dfl::csv {

struct Table {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // data rows, header excluded
};

// Schema fields never contain commas or quotes, so a plain split is enough.
inline Table read_file(const std::string& path, const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError("cannot open '" + path + "'");
  }
  Table table;
  table.path = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (line_no == 1) {
      if (!expected_header.empty() && fields != expected_header) {
        throw ParseError(path + ":1: expected header '" + join(expected_header, ",") +
                         "', got '" + line + "'");
      }
      table.header = std::move(fields);
      continue;
    }
    if (!table.header.empty() && fields.size() != table.header.size()) {
      throw ParseError(strf("%s:%zu: expected %zu fields, got %zu", path.c_str(), line_no,
                            table.header.size(), fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) {
    throw ParseError(path + ": empty file");
  }
  return table;
}

class Writer {
 public:
  Writer(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) {
      throw DataError("cannot write '" + path + "'");
    }
    out_ << join(header, ",") << "\n";
  }

  void row(const std::vector<std::string>& fields) {
    out_ << join(fields, ",") << "\n";
  }

 private:
  std::ofstream out_;
};

}  // namespace dfl::csv
