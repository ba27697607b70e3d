#include "agentbuddy/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "agentbuddy/core_model.hpp"

namespace agentbuddy {

namespace {

std::string trim(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = text.find_last_not_of(" \t\r");
  return text.substr(first, last - first + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig config;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + ":" + std::to_string(number) + ": expected key = value");
    }
    const auto key = trim(stripped.substr(0, eq));
    if (key.empty()) throw ValidationError(origin + ":" + std::to_string(number) + ": empty key");
    if (!config.values_.emplace(key, trim(stripped.substr(eq + 1))).second) {
      throw ValidationError(origin + ":" + std::to_string(number) + ": duplicate key " + key);
    }
  }
  return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  auto config = parse(text.str(), path.string());
  config.base_dir_ = path.parent_path();
  return config;
}

std::string KeyValueConfig::env_name(const std::string& key) {
  std::string name = "AGENTBUDDY_";
  for (char c : key) {
    if (c == '.' || c == '-') {
      name.push_back('_');
    } else {
      name.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
  }
  return name;
}

void KeyValueConfig::apply_env_overrides(const std::vector<std::string>& keys) {
  std::vector<std::string> all = keys;
  for (const auto& [key, value] : values_) all.push_back(key);
  for (const auto& key : all) {
    if (const char* value = std::getenv(env_name(key).c_str())) values_[key] = value;
  }
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto value = get(key);
  if (!value) return fallback;
  try {
    std::size_t used = 0;
    const double out = std::stod(*value, &used);
    if (used != value->size()) throw std::invalid_argument(key);
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + " is not a number: " + *value);
  }
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  auto value = get(key);
  if (!value) return fallback;
  try {
    std::size_t used = 0;
    const long long out = std::stoll(*value, &used, 10);
    if (used != value->size()) throw std::invalid_argument(key);
    return out;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + " is not an integer: " + *value);
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto value = get(key);
  if (!value) return fallback;
  if (*value == "true" || *value == "1" || *value == "yes") return true;
  if (*value == "false" || *value == "0" || *value == "no") return false;
  throw ValidationError("config key " + key + " is not a boolean: " + *value);
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  auto value = get(key);
  if (!value) return out;
  std::stringstream in(*value);
  std::string item;
  while (std::getline(in, item, ',')) {
    KeyValueConfig one;
    one.set(key, trim(item));
    out.push_back(one.get_double(key, 0.0));
  }
  return out;
}

std::filesystem::path KeyValueConfig::resolve_path(const std::string& value) const {
  std::filesystem::path p(value);
  if (p.is_absolute() || base_dir_.empty()) return p;
  return base_dir_ / p;
}

}  // namespace agentbuddy
