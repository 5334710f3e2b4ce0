#include "sapf/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "sapf/error.hpp"

namespace sapf {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!cfg.values_.emplace(key, value).second) throw ConfigError(where + ": duplicate key " + key);
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void KeyValueConfig::get(const std::string& key, std::string& out) const {
  auto it = values_.find(key);
  if (it == values_.end()) return;
  used_.insert(key);
  out = it->second;
}

void KeyValueConfig::get(const std::string& key, std::size_t& out) const {
  auto it = values_.find(key);
  if (it == values_.end()) return;
  used_.insert(key);
  const std::string& v = it->second;
  std::size_t parsed = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), parsed);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(origin_ + ": " + key + " expects a non-negative integer, got '" + v + "'");
  }
  out = parsed;
}

void KeyValueConfig::get(const std::string& key, double& out) const {
  auto it = values_.find(key);
  if (it == values_.end()) return;
  used_.insert(key);
  const std::string& v = it->second;
  double parsed = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), parsed);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(origin_ + ": " + key + " expects a number, got '" + v + "'");
  }
  out = parsed;
}

void KeyValueConfig::get(const std::string& key, bool& out) const {
  auto it = values_.find(key);
  if (it == values_.end()) return;
  used_.insert(key);
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "on" || v == "yes") {
    out = true;
  } else if (v == "false" || v == "0" || v == "off" || v == "no") {
    out = false;
  } else {
    throw ConfigError(origin_ + ": " + key + " expects a boolean, got '" + v + "'");
  }
}

void KeyValueConfig::reject_unused() const {
  std::string unknown;
  for (const auto& [k, v] : values_) {
    if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  }
  if (!unknown.empty()) throw ConfigError(origin_ + ": unknown keys: " + unknown);
}

std::string KeyValueConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace sapf
