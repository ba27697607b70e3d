#include "agentbuddy/core_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

namespace agentbuddy {

namespace {

bool is_blank(const std::string& text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

void validate(const Query& query) {
  if (query.session_id.empty()) throw ValidationError("session_id is empty");
  if (is_blank(query.utterance)) throw ValidationError("utterance is empty");
}

FeatureVector::FeatureVector(std::size_t dimension) : dimension_(dimension) {
  if (dimension == 0) throw ValidationError("feature dimension must be positive");
}

double FeatureVector::get(std::uint32_t index) const {
  auto it = entries_.find(index);
  return it == entries_.end() ? 0.0 : it->second;
}

void FeatureVector::set(std::uint32_t index, double value) {
  if (index >= dimension_) throw ValidationError("feature index out of range");
  if (!std::isfinite(value)) throw ValidationError("feature value not finite");
  if (value == 0.0) {
    entries_.erase(index);
  } else {
    entries_[index] = value;
  }
}

void FeatureVector::add(std::uint32_t index, double value) {
  set(index, get(index) + value);
}

double FeatureVector::squared_norm() const {
  double total = 0.0;
  for (const auto& [index, value] : entries_) total += value * value;
  return total;
}

double FeatureVector::norm() const { return std::sqrt(squared_norm()); }

void FeatureVector::normalize() {
  const double n = norm();
  if (n == 0.0) return;
  scale(1.0 / n);
}

void FeatureVector::scale(double factor) {
  if (factor == 0.0) {
    entries_.clear();
    return;
  }
  for (auto& [index, value] : entries_) value *= factor;
}

void FeatureVector::axpy(double factor, const FeatureVector& other) {
  if (other.dimension_ != dimension_) throw ValidationError("dimension mismatch");
  for (const auto& [index, value] : other.entries_) add(index, factor * value);
}

std::vector<double> FeatureVector::to_dense() const {
  std::vector<double> out(dimension_, 0.0);
  for (const auto& [index, value] : entries_) out[index] = value;
  return out;
}

FeatureVector FeatureVector::from_dense(const std::vector<double>& values) {
  FeatureVector out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0) out.set(static_cast<std::uint32_t>(i), values[i]);
  }
  return out;
}

std::string to_string(ArmKind kind) {
  switch (kind) {
    case ArmKind::search: return "search";
    case ArmKind::faq: return "faq";
    case ArmKind::remote: return "remote";
  }
  return "search";
}

ArmKind arm_kind_from_string(const std::string& name) {
  if (name == "search") return ArmKind::search;
  if (name == "faq") return ArmKind::faq;
  if (name == "remote") return ArmKind::remote;
  throw ValidationError("unknown arm kind: " + name);
}

void validate(const InteractionRecord& record) {
  if (!(record.propensity > 0.0 && record.propensity <= 1.0)) {
    throw ValidationError("propensity outside (0,1]");
  }
  if (record.reward && !(*record.reward >= 0.0 && *record.reward <= 1.0)) {
    throw ValidationError("reward outside [0,1]");
  }
  if (record.stars && (*record.stars < 1 || *record.stars > 5)) {
    throw ValidationError("stars outside 1..5");
  }
}

double normalize_stars(int stars) {
  if (stars < 1 || stars > 5) {
    throw ValidationError("stars must be in 1..5, got " + std::to_string(stars));
  }
  return static_cast<double>(stars - 1) / 4.0;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex_digest(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace agentbuddy
