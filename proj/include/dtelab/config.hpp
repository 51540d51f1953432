#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dtelab/core_model.hpp"

namespace dtelab {

// Flat key-value configuration with dotted section names:
//
//   # comment
//   nuisance.learner = boosted_stumps
//   inference.replications = 500
//
// One entry per line; whitespace around keys and values is ignored; a later
// entry overrides an earlier one.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, const std::string& source = "<config>") {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw Error(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
      auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.empty()) throw Error(source + ":" + std::to_string(line_no) + ": empty key");
      cfg.values_[std::string(key)] = std::string(value);
      if (end == text.size()) break;
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void merge(const KeyValueConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  double get_double(const std::string& key, double fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    auto v = detail::parse_double(it->second);
    if (!v) throw Error("config key '" + key + "' expects a number, got '" + it->second + "'");
    return *v;
  }
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const double v = get_double(key, static_cast<double>(fallback));
    if (v != static_cast<double>(static_cast<std::int64_t>(v)))
      throw Error("config key '" + key + "' expects an integer");
    return static_cast<std::int64_t>(v);
  }
  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      if (it->second.empty() || it->second.front() < '0' || it->second.front() > '9') throw Error("");
      std::size_t idx = 0;
      const auto v = std::stoull(it->second, &idx);
      if (idx != it->second.size()) throw Error("");
      return v;
    } catch (...) {
      throw Error("config key '" + key + "' expects a non-negative integer seed");
    }
  }
  bool get_bool(const std::string& key, bool fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw Error("config key '" + key + "' expects a boolean, got '" + s + "'");
  }
  std::vector<double> get_list(const std::string& key, std::vector<double> fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::string_view rest = it->second;
    while (!rest.empty()) {
      auto comma = rest.find(',');
      auto item = trim(rest.substr(0, comma));
      auto v = detail::parse_double(item);
      if (!v) throw Error("config key '" + key + "' expects a comma-separated list of numbers");
      out.push_back(*v);
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    return out;
  }

  // Keys present in the file that no getter asked for.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.contains(k)) out.push_back(k);
    return out;
  }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  const std::map<std::string, std::string>& entries() const noexcept { return values_; }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace dtelab
