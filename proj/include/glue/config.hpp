#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "glue/error.hpp"

namespace glue {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t x = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    x ^= c;
    x *= 0x100000001b3ull;
  }
  return x;
}

/// Flat `key = value` settings. A `[name]` line prefixes the keys that follow
/// with `name.`; `#` starts a comment. Values are kept as text and parsed on
/// access, so the canonical form (and its hash) only depends on what was set.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& origin = "config") {
    Config cfg;
    std::string section;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::string where = origin + ":" + std::to_string(lineno);
      if (line.front() == '[') {
        if (line.back() != ']') fail(ErrorKind::ConfigError, where + ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (!valid_name(section)) fail(ErrorKind::ConfigError, where + ": bad section name '" + section + "'");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail(ErrorKind::ConfigError, where + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      cfg.assign(key, trim(line.substr(eq + 1)), where);
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::ConfigError, "cannot read config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  /// `key=value` from the command line; later assignments win.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) fail(ErrorKind::ConfigError, "--set expects key=value, got '" + assignment + "'");
    entries_[check_key(trim(assignment.substr(0, eq)), "--set")] = trim(assignment.substr(eq + 1));
  }
  void set(const std::string& key, const std::string& value) { entries_[check_key(key, "set")] = value; }
  void erase(const std::string& key) { entries_.erase(key); }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
  }
  std::string require(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) fail(ErrorKind::ConfigError, "missing required key " + key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, entries_.at(key)) : fallback;
  }
  int get_int(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = entries_.at(key);
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      fail(ErrorKind::ConfigError, key + ": expected an integer, got '" + s + "'");
    return v;
  }
  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = entries_.at(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    fail(ErrorKind::ConfigError, key + ": expected a boolean, got '" + s + "'");
  }
  /// Comma-separated list of words.
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::string> out;
    std::istringstream ss(entries_.at(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) fail(ErrorKind::ConfigError, key + ": empty list item");
      out.push_back(item);
    }
    return out;
  }
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& s : get_list(key, {})) out.push_back(to_double(key, s));
    return out;
  }
  std::string get_choice(const std::string& key, const std::string& fallback,
                         std::initializer_list<std::string_view> allowed) const {
    const std::string v = get(key, fallback);
    if (std::find(allowed.begin(), allowed.end(), v) != allowed.end()) return v;
    std::string list;
    for (auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    fail(ErrorKind::ConfigError, key + ": '" + v + "' is not one of " + list);
  }

  /// Rejects keys outside `allowed`; the message names the first offender.
  void check_known(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : entries_)
      if (!allowed.count(k)) fail(ErrorKind::ConfigError, "unknown key " + k);
  }

  /// Sorted `key = value` lines, the input to hash().
  std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : entries_) s += k + " = " + v + "\n";
    return s;
  }

  /// FNV-1a of the canonical form, as 16 hex digits.
  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical())));
    return buf;
  }

 private:
  std::map<std::string, std::string> entries_;

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }
  static bool valid_name(const std::string& s) {
    if (s.empty() || s.front() == '.' || s.back() == '.') return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
    });
  }
  static std::string check_key(const std::string& key, const std::string& where) {
    if (!valid_name(key)) fail(ErrorKind::ConfigError, where + ": bad key '" + key + "'");
    return key;
  }
  void assign(const std::string& key, const std::string& value, const std::string& where) {
    check_key(key, where);
    if (!entries_.emplace(key, value).second) fail(ErrorKind::ConfigError, where + ": duplicate key " + key);
  }
  static double to_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
      fail(ErrorKind::ConfigError, key + ": expected a number, got '" + s + "'");
    return v;
  }
};

}  // namespace glue
