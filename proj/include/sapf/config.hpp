#pragma once

// Flat `key = value` configuration files. Lines starting with '#' and blank
// lines are ignored; keys are dotted (`model.encoder_layers`).

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace sapf {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  /// Throws ConfigError on a malformed line or a repeated key. `origin` only
  /// labels error messages.
  static KeyValueConfig parse(std::string_view text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::string& path);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  // Typed lookups leave `out` untouched when the key is absent and mark the
  // key as consumed. Unparseable values throw ConfigError.
  void get(const std::string& key, std::string& out) const;
  void get(const std::string& key, std::size_t& out) const;
  void get(const std::string& key, double& out) const;
  void get(const std::string& key, bool& out) const;

  /// Throws ConfigError naming every key no lookup has consumed.
  void reject_unused() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// Canonical text: sorted `key = value` lines.
  std::string dump() const;

 private:
  std::string origin_ = "<string>";
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace sapf
