#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "mobiseg/common.hpp"

// Minimal comma-separated parsing: no quoting, identifiers must not contain
// commas.
namespace mobiseg::csv {

inline std::string_view trim_line(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n' || s.back() == ' ' || s.back() == '\t')) {
    s.remove_suffix(1);
  }
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim_line(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool to_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

template <typename Int>
inline bool to_int(std::string_view s, Int& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

// Shortest representation that round-trips.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::ifstream open_input(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " file '" + path + "'");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

// Reads a CSV with the exact expected header; calls row(fields, line_no) for
// each non-empty data line.
template <typename F>
void read_table(std::istream& in, std::string_view name, const std::vector<std::string_view>& header, F&& row) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(std::string(name) + ": empty file");
  const auto got = split(trim_line(line));
  if (got != header) {
    std::string want;
    for (std::size_t i = 0; i < header.size(); ++i) want += (i ? "," : "") + std::string(header[i]);
    throw DataError(std::string(name) + ": expected header '" + want + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim_line(line);
    if (t.empty()) continue;
    auto fields = split(t);
    if (fields.size() != header.size()) {
      throw DataError(std::string(name) + ": line " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields");
    }
    row(fields, line_no);
  }
}

}  // namespace mobiseg::csv
