#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace fcmaudit::csv {

struct Options {
  char delimiter = ',';
  bool has_header = false;
  // With a space delimiter, runs of blanks count as one separator (the raw
  // German Credit file is space-separated with occasional double spaces).
  bool collapse_spaces() const { return delimiter == ' '; }
};

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_line(std::string_view line, const Options& opt) {
  std::vector<std::string> cells;
  if (opt.collapse_spaces()) {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      if (j > i) cells.push_back(trim(line.substr(i, j - i)));
      i = j;
    }
  } else {
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == opt.delimiter) {
        cells.push_back(trim(line.substr(start, i - start)));
        start = i + 1;
      }
    }
  }
  return cells;
}

// Reads all non-empty lines, split into cells. Throws on unreadable files.
inline std::vector<std::vector<std::string>> read_rows(const std::string& path,
                                                       const Options& opt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool skipped_header = !opt.has_header;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    rows.push_back(split_line(line, opt));
  }
  return rows;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e;
}

// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

inline void write_row(std::ostream& os, const std::vector<std::string>& cells,
                      char delimiter = ',') {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os << delimiter;
    os << cells[i];
  }
  os << '\n';
}

}  // namespace fcmaudit::csv
