#include "agentbuddy/evaluation.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace agentbuddy {

using ordered_json = nlohmann::ordered_json;

std::string serialize_record(const InteractionRecord& record) {
  validate(record);
  ordered_json j;
  j["ordinal"] = record.ordinal;
  j["ts"] = record.ts;
  j["session_id"] = record.session_id;
  ordered_json idx = ordered_json::array();
  ordered_json val = ordered_json::array();
  for (const auto& [i, v] : record.context.entries()) {
    idx.push_back(i);
    val.push_back(v);
  }
  j["context"] = {{"dim", record.context.dimension()}, {"idx", idx}, {"val", val}};
  j["arm_id"] = record.arm_id;
  j["propensity"] = record.propensity;
  j["reward"] = record.reward ? ordered_json(*record.reward) : ordered_json(nullptr);
  j["policy_name"] = record.policy_name;
  j["stars"] = record.stars ? ordered_json(*record.stars) : ordered_json(nullptr);
  j["seed_state_digest"] = record.seed_state_digest;
  return j.dump();
}

InteractionRecord parse_record(std::string_view line) {
  InteractionRecord r;
  try {
    const auto j = ordered_json::parse(line);
    r.ordinal = j.at("ordinal").get<std::uint64_t>();
    r.ts = j.at("ts").get<TimestampMs>();
    r.session_id = j.at("session_id").get<std::string>();
    const auto& ctx = j.at("context");
    r.context = FeatureVector(ctx.at("dim").get<std::size_t>());
    const auto& idx = ctx.at("idx");
    const auto& val = ctx.at("val");
    if (idx.size() != val.size()) throw ValidationError("context idx/val length mismatch");
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto index = idx[i].get<std::uint32_t>();
      const auto value = val[i].get<double>();
      if (value == 0.0) throw ValidationError("explicit zero in sparse context");
      if (r.context.entries().contains(index)) throw ValidationError("repeated context index");
      r.context.set(index, value);
    }
    r.arm_id = j.at("arm_id").get<ArmId>();
    r.propensity = j.at("propensity").get<double>();
    if (!j.at("reward").is_null()) r.reward = j.at("reward").get<double>();
    r.policy_name = j.at("policy_name").get<std::string>();
    if (!j.at("stars").is_null()) r.stars = j.at("stars").get<int>();
    if (j.contains("seed_state_digest")) r.seed_state_digest = j["seed_state_digest"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(e.what());
  }
  validate(r);
  return r;
}

InteractionLog::InteractionLog(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) ++next_ordinal_;
    }
  }
  out_.open(path_, std::ios::app | std::ios::binary);
  if (!out_) throw StorageError("cannot open log " + path_.string());
}

std::uint64_t InteractionLog::append(InteractionRecord record) {
  record.ordinal = next_ordinal_;
  const auto line = serialize_record(record);
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw StorageError("write to " + path_.string() + " failed");
  return next_ordinal_++;
}

std::vector<InteractionRecord> read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open log " + path.string());
  std::vector<InteractionRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

TargetPolicy target_from(const PolicyState& state) {
  return [&state](const FeatureVector& x) { return state.greedy_action(x); };
}

namespace {

struct WeightedSums {
  std::size_t usable = 0;
  double weighted_reward = 0.0;
  double total_weight = 0.0;
};

WeightedSums accumulate(const std::vector<InteractionRecord>& log, const TargetPolicy& target) {
  WeightedSums sums;
  for (const auto& r : log) {
    if (!r.reward) continue;
    ++sums.usable;
    if (target(r.context) != r.arm_id) continue;
    const double w = 1.0 / r.propensity;
    sums.weighted_reward += *r.reward * w;
    sums.total_weight += w;
  }
  return sums;
}

}  // namespace

double ips_estimate(const std::vector<InteractionRecord>& log, const TargetPolicy& target) {
  const auto sums = accumulate(log, target);
  if (sums.usable == 0) throw EstimationError("no rewarded records to estimate from");
  return sums.weighted_reward / static_cast<double>(sums.usable);
}

double snips_estimate(const std::vector<InteractionRecord>& log, const TargetPolicy& target) {
  const auto sums = accumulate(log, target);
  if (sums.usable == 0) throw EstimationError("no rewarded records to estimate from");
  if (sums.total_weight <= 0.0) throw EstimationError("target policy matches no logged action");
  return sums.weighted_reward / sums.total_weight;
}

std::string format_real(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

ReplayResult replay(const std::vector<InteractionRecord>& log, const PolicyConfig& config,
                    std::uint64_t seed, std::size_t arms) {
  std::size_t dimension = 0;
  std::size_t max_arm = 0;
  for (const auto& r : log) {
    if (dimension == 0) dimension = r.context.dimension();
    if (r.context.dimension() != dimension) {
      throw ValidationError("record " + std::to_string(r.ordinal) + " has a different context dimension");
    }
    max_arm = std::max<std::size_t>(max_arm, r.arm_id);
  }
  if (arms == 0) arms = log.empty() ? 1 : max_arm + 1;
  if (max_arm >= arms && !log.empty()) throw ValidationError("log references arm beyond K");
  if (dimension == 0) dimension = 1;

  ReplayResult result{PolicyState(config, dimension, arms, seed), {}};
  auto& m = result.metrics;
  std::ostringstream csv;
  csv << "ordinal,logged_arm,chosen_arm,matched,reward\n";
  for (const auto& r : log) {
    const auto choice = result.state.choose(r.context);
    const bool matched = choice.arm_id == r.arm_id && r.reward.has_value();
    if (matched) {
      result.state.update(r.context, r.arm_id, choice.propensity, r.reward);
      ++m.matched;
      m.cumulative_reward += *r.reward;
    }
    ++m.rounds;
    csv << r.ordinal << ',' << r.arm_id << ',' << choice.arm_id << ',' << (matched ? 1 : 0) << ','
        << (matched ? format_real(*r.reward) : std::string{}) << '\n';
  }
  m.pulls = result.state.pull_counts();
  m.csv = csv.str();
  return result;
}

}  // namespace agentbuddy
