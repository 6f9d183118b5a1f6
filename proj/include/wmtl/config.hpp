#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wmtl/errors.hpp"

namespace wmtl {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace detail

/// Key/value experiment configuration in plain text: `key = value` lines,
/// `#` comments, arrays as comma lists with optional brackets
/// (`seeds = [0, 1, 2]`).
class Config {
 public:
  Config() = default;

  static Config from_text(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) + " has no '=': " + t);
      }
      const std::string key = detail::trim(t.substr(0, eq));
      const std::string value = detail::trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static Config from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << f.rdbuf();
    return from_text(buf.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(key, it->second);
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_int(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: " + it->second);
  }

  std::vector<std::string> get_string_list(const std::string& key,
                                           std::vector<std::string> fallback = {}) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return split_list(it->second);
  }

  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> fallback = {}) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const std::string& s : split_list(it->second)) out.push_back(parse_double(key, s));
    return out;
  }

  std::vector<long long> get_int_list(const std::string& key,
                                      std::vector<long long> fallback = {}) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<long long> out;
    for (const std::string& s : split_list(it->second)) out.push_back(parse_int(key, s));
    return out;
  }

  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  static std::vector<std::string> split_list(std::string s) {
    s = detail::trim(s);
    if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string part;
    while (std::getline(is, part, ',')) {
      const std::string t = detail::trim(part);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  static double parse_double(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not a number: " + s);
    }
  }

  static long long parse_int(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not an integer: " + s);
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace wmtl
