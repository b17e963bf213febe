#pragma once

// Minimal TOML subset: [section] tables, key = value with strings, integers,
// floats, booleans, and flat arrays of numbers. Comments start with '#'.
// Covers the run-config format; not a general TOML parser.

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "crossview/check.hpp"

namespace crossview::toml {

using Value = std::variant<int64_t, double, bool, std::string, std::vector<double>>;
using Table = std::map<std::string, Value>;
using Document = std::map<std::string, Table>;

namespace detail {
inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline Value parse_scalar(const std::string& raw, int line_no) {
  std::string s = trim(raw);
  CV_REQUIRE(!s.empty(), "toml: empty value at line " + std::to_string(line_no));
  if (s.front() == '"') {
    CV_REQUIRE(s.size() >= 2 && s.back() == '"',
               "toml: unterminated string at line " + std::to_string(line_no));
    return s.substr(1, s.size() - 2);
  }
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.front() == '[') {
    CV_REQUIRE(s.back() == ']', "toml: unterminated array at line " + std::to_string(line_no));
    std::vector<double> out;
    std::string body = s.substr(1, s.size() - 2);
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      out.push_back(std::stod(item));
    }
    return out;
  }
  bool looks_float = s.find_first_of(".eE") != std::string::npos;
  try {
    if (!looks_float) return static_cast<int64_t>(std::stoll(s));
    return std::stod(s);
  } catch (const std::exception&) {
    throw io_error("toml: cannot parse value '" + s + "' at line " + std::to_string(line_no));
  }
}
}  // namespace detail

inline Document parse(const std::string& text) {
  Document doc;
  std::string section;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) {
      // keep '#' inside quoted strings
      size_t q1 = line.find('"');
      if (q1 == std::string::npos || hash < q1) line = line.substr(0, hash);
    }
    std::string s = detail::trim(line);
    if (s.empty()) continue;
    if (s.front() == '[') {
      CV_REQUIRE(s.back() == ']', "toml: bad section at line " + std::to_string(line_no));
      section = detail::trim(s.substr(1, s.size() - 2));
      doc[section];
      continue;
    }
    size_t eq = s.find('=');
    CV_REQUIRE(eq != std::string::npos, "toml: expected key = value at line " +
                                            std::to_string(line_no));
    std::string key = detail::trim(s.substr(0, eq));
    doc[section][key] = detail::parse_scalar(s.substr(eq + 1), line_no);
  }
  return doc;
}

inline int64_t get_int(const Table& t, const std::string& key, int64_t fallback) {
  auto it = t.find(key);
  if (it == t.end()) return fallback;
  if (const auto* v = std::get_if<int64_t>(&it->second)) return *v;
  if (const auto* d = std::get_if<double>(&it->second)) return static_cast<int64_t>(*d);
  throw io_error("toml: key '" + key + "' is not an integer");
}

inline double get_double(const Table& t, const std::string& key, double fallback) {
  auto it = t.find(key);
  if (it == t.end()) return fallback;
  if (const auto* v = std::get_if<double>(&it->second)) return *v;
  if (const auto* i = std::get_if<int64_t>(&it->second)) return static_cast<double>(*i);
  throw io_error("toml: key '" + key + "' is not a number");
}

inline bool get_bool(const Table& t, const std::string& key, bool fallback) {
  auto it = t.find(key);
  if (it == t.end()) return fallback;
  if (const auto* v = std::get_if<bool>(&it->second)) return *v;
  throw io_error("toml: key '" + key + "' is not a boolean");
}

inline std::string get_string(const Table& t, const std::string& key,
                              const std::string& fallback) {
  auto it = t.find(key);
  if (it == t.end()) return fallback;
  if (const auto* v = std::get_if<std::string>(&it->second)) return *v;
  throw io_error("toml: key '" + key + "' is not a string");
}

inline const Table& section_or_empty(const Document& doc, const std::string& name) {
  static const Table empty;
  auto it = doc.find(name);
  return it == doc.end() ? empty : it->second;
}

}  // namespace crossview::toml
