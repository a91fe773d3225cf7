// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsim::detail {

// Plain comma-split; the repo's CSV formats do not use quoting.
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

[[noreturn]] inline void csv_fail(const std::string& path, size_t lineno, const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + msg);
}

inline double csv_double(const std::string& field, const std::string& path, size_t lineno,
                         const char* name) {
  char* end = nullptr;
  double x = std::strtod(field.c_str(), &end);
  if (end == field.c_str() || *end != '\0')
    csv_fail(path, lineno, std::string("bad ") + name + ": '" + field + "'");
  return x;
}

inline long long csv_int(const std::string& field, const std::string& path, size_t lineno,
                         const char* name) {
  char* end = nullptr;
  long long x = std::strtoll(field.c_str(), &end, 10);
  if (end == field.c_str() || *end != '\0')
    csv_fail(path, lineno, std::string("bad ") + name + ": '" + field + "'");
  return x;
}

// %.17g round-trips every double exactly.
inline std::string fmt_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string fmt_g9(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  return out;
}

}  // namespace fedsim::detail
