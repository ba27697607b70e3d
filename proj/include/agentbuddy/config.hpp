#pragma once

// `key = value` configuration files. Lines starting with '#' are comments.
// Every key can be overridden from the environment as AGENTBUDDY_<KEY>, with
// dots replaced by underscores and letters upper-cased
// (featurizer.dimension -> AGENTBUDDY_FEATURIZER_DIMENSION).

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace agentbuddy {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  // Throws ValidationError on malformed lines or duplicate keys.
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  // Applies AGENTBUDDY_* overrides for the keys in `keys` plus every key
  // already present.
  void apply_env_overrides(const std::vector<std::string>& keys = {});

  bool contains(const std::string& key) const { return values_.contains(key); }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  const std::filesystem::path& base_dir() const { return base_dir_; }
  // Resolves a path value relative to the config file's directory.
  std::filesystem::path resolve_path(const std::string& value) const;

  static std::string env_name(const std::string& key);

 private:
  std::map<std::string, std::string> values_;
  std::filesystem::path base_dir_;
};

}  // namespace agentbuddy
