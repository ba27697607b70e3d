#pragma once

// Append-only JSONL interaction log, off-policy value estimates over logged
// propensities, and deterministic replay of the online loop.
//
// One record per line, fields in this fixed order:
//   {"ordinal","ts","session_id","context":{"dim","idx","val"},"arm_id",
//    "propensity","reward","policy_name","stars","seed_state_digest"}
// `reward` and `stars` are null for interactions that never got feedback.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "agentbuddy/core_model.hpp"
#include "agentbuddy/policy.hpp"

namespace agentbuddy {

std::string serialize_record(const InteractionRecord& record);
// Throws ValidationError on malformed input.
InteractionRecord parse_record(std::string_view line);

class InteractionLog {
 public:
  // Opens (creating if needed) the log and counts existing records so
  // ordinals continue after a reopen.
  explicit InteractionLog(std::filesystem::path path);

  // Assigns the next ordinal, writes one line and flushes. Throws
  // StorageError when the write fails.
  std::uint64_t append(InteractionRecord record);

  std::uint64_t size() const { return next_ordinal_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::uint64_t next_ordinal_ = 0;
};

// Throws ValidationError("<path>:<line>: ...") on the first malformed line.
std::vector<InteractionRecord> read_log(const std::filesystem::path& path);

using TargetPolicy = std::function<ArmId(const FeatureVector&)>;

TargetPolicy target_from(const PolicyState& state);

// Mean over rewarded records of r * 1[target(x) = a] / p.
double ips_estimate(const std::vector<InteractionRecord>& log, const TargetPolicy& target);
// sum(r w) / sum(w) with w = 1[target(x) = a] / p.
double snips_estimate(const std::vector<InteractionRecord>& log, const TargetPolicy& target);

struct ReplayMetrics {
  std::uint64_t rounds = 0;
  std::uint64_t matched = 0;
  double cumulative_reward = 0.0;
  std::vector<std::uint64_t> pulls;
  std::string csv;  // ordinal,logged_arm,chosen_arm,matched,reward
};

struct ReplayResult {
  PolicyState state;
  ReplayMetrics metrics;
};

// Re-runs choose/update over the logged contexts in order. A record teaches
// the policy only when the replayed choice equals the logged arm and the
// record carries a reward. `arms` = 0 infers K from the largest logged arm.
ReplayResult replay(const std::vector<InteractionRecord>& log, const PolicyConfig& config,
                    std::uint64_t seed, std::size_t arms = 0);

std::string format_real(double value);

}  // namespace agentbuddy
