#pragma once

// Domain types shared by the router, the learner, the log and the service.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace agentbuddy {

using ArmId = std::uint32_t;
using TimestampMs = std::int64_t;

// Error taxonomy. Callers map these onto HTTP codes or CLI exit codes.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ArmUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RegistrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoArmError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContradictionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StorageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SnapshotError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Query {
  std::string session_id;
  std::string utterance;
  TimestampMs timestamp = 0;
};

// Throws ValidationError on an empty session id or a blank utterance.
void validate(const Query& query);

// Sparse vector in R^dimension. Entries are kept ordered by index so that
// iteration, equality and serialization are deterministic.
class FeatureVector {
 public:
  FeatureVector() = default;
  explicit FeatureVector(std::size_t dimension);

  std::size_t dimension() const { return dimension_; }
  const std::map<std::uint32_t, double>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  double get(std::uint32_t index) const;
  // Sets the entry; a zero value removes it. Throws ValidationError for an
  // out-of-range index or a non-finite value.
  void set(std::uint32_t index, double value);
  void add(std::uint32_t index, double value);

  double squared_norm() const;
  double norm() const;
  // No-op on the zero vector.
  void normalize();
  void scale(double factor);
  // this += factor * other. Dimensions must agree.
  void axpy(double factor, const FeatureVector& other);

  std::vector<double> to_dense() const;
  static FeatureVector from_dense(const std::vector<double>& values);

  bool operator==(const FeatureVector&) const = default;

 private:
  std::size_t dimension_ = 0;
  std::map<std::uint32_t, double> entries_;
};

enum class ArmKind { search, faq, remote };

std::string to_string(ArmKind kind);
ArmKind arm_kind_from_string(const std::string& name);

struct ArmDescriptor {
  ArmId arm_id = 0;
  std::string name;
  ArmKind kind = ArmKind::search;
};

// Half-open byte range [begin, end) into a UTF-8 string.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

struct Suggestion {
  std::string suggestion_id;
  ArmId arm_id = 0;
  std::string answer_text;
  std::vector<Span> highlights;
  double propensity = 1.0;
  std::optional<std::string> clarifying_question;
};

struct FeedbackEvent {
  std::string suggestion_id;
  int stars = 0;
  TimestampMs received_at = 0;
};

struct InteractionRecord {
  std::uint64_t ordinal = 0;
  TimestampMs ts = 0;
  std::string session_id;
  FeatureVector context;
  ArmId arm_id = 0;
  double propensity = 1.0;
  std::optional<double> reward;
  std::string policy_name;
  std::optional<int> stars;
  std::string seed_state_digest;

  bool operator==(const InteractionRecord&) const = default;
};

// Throws ValidationError when propensity is outside (0,1] or reward outside [0,1].
void validate(const InteractionRecord& record);

// Linear map of a 1..5 star rating onto [0,1].
double normalize_stars(int stars);

// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex_digest(std::uint64_t value);

}  // namespace agentbuddy
