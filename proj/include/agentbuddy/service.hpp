#pragma once

// The suggest -> human rating -> online update loop behind a JSON API.
//
//   POST /v1/suggest        {session_id, utterance}
//   POST /v1/feedback       {suggestion_id, stars}
//   POST /v1/clarify/answer {session_id, term, answer: "yes"|"no"}
//   GET  /v1/stats
//   GET  /v1/arms
//
// Every route requires `Authorization: Bearer <token>`.

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "agentbuddy/arms.hpp"
#include "agentbuddy/clarifier.hpp"
#include "agentbuddy/config.hpp"
#include "agentbuddy/evaluation.hpp"
#include "agentbuddy/featurizer.hpp"
#include "agentbuddy/policy.hpp"

namespace httplib {
class Server;
}

namespace agentbuddy {

struct RemoteArmConfig {
  std::string name;
  std::string endpoint;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string token;
  std::filesystem::path corpus_path;
  std::filesystem::path faq_path;
  std::filesystem::path log_path;
  std::filesystem::path snapshot_path;

  PolicyConfig policy;
  std::uint64_t policy_seed = 1;
  FeaturizerConfig featurizer = {.dimension = 64};

  AmbiguityThresholds ambiguity;
  std::size_t candidate_pool = 20;
  std::size_t resolve_at = 3;
  bool append_answers_to_history = true;

  std::int64_t feedback_ttl_ms = 24LL * 60 * 60 * 1000;
  std::size_t search_top_k = 3;
  std::vector<RemoteArmConfig> remote_arms;
  int remote_timeout_ms = 2000;
};

// Every key the service reads; used for AGENTBUDDY_* overrides.
const std::vector<std::string>& service_config_keys();

// Throws ValidationError when the token is empty or a required path is missing.
ServiceConfig service_config_from(const KeyValueConfig& config);

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

using Clock = std::function<TimestampMs()>;
TimestampMs system_clock_ms();

class AgentBuddyService {
 public:
  // Loads corpus and FAQ, registers search, faq, faq_overlap and the remote
  // arms in that order, then restores the policy snapshot if one exists.
  explicit AgentBuddyService(ServiceConfig config, Clock clock = system_clock_ms);

  // For callers that assemble their own arms. `corpus` backs clarification.
  AgentBuddyService(ServiceConfig config, ArmRegistry registry, std::shared_ptr<const Corpus> corpus,
                    Clock clock = system_clock_ms);

  bool authorized(std::string_view authorization_header) const;

  ApiResponse handle_suggest(const nlohmann::json& request);
  ApiResponse handle_feedback(const nlohmann::json& request);
  ApiResponse handle_clarify_answer(const nlohmann::json& request);
  ApiResponse handle_stats();
  ApiResponse handle_arms() const;

  // Finalizes rewardless log records for suggestions older than the TTL.
  void expire_pending();
  // Atomically writes the policy snapshot to the configured path.
  void save_snapshot();

  const ServiceConfig& config() const { return config_; }
  const ArmRegistry& registry() const { return registry_; }
  std::vector<std::uint64_t> pull_counts() const;
  std::string policy_digest() const;

 private:
  struct Pending {
    std::string session_id;
    FeatureVector context;
    ArmId arm_id;
    double propensity;
    TimestampMs created_at;
  };
  struct Clarification {
    CandidateSet candidates;
    Filter filter;
  };
  struct SessionState {
    Session session;
    std::optional<Clarification> clarification;
    TimestampMs last_seen = 0;
  };

  void init();
  void expire_locked(TimestampMs now);
  std::string next_suggestion_id();
  SessionState& session_locked(const std::string& session_id, TimestampMs now);
  nlohmann::json resolved_answers(const CandidateSet& candidates) const;

  ServiceConfig config_;
  Clock clock_;
  ArmRegistry registry_;
  std::shared_ptr<const Corpus> corpus_;

  mutable std::mutex writer_;
  std::optional<PolicyState> policy_;
  std::optional<InteractionLog> log_;
  std::unordered_map<std::string, Pending> pending_;
  std::unordered_map<std::string, TimestampMs> finalized_;
  std::unordered_map<std::string, SessionState> sessions_;
  std::uint64_t rounds_ = 0;
  std::uint64_t stars_total_ = 0;
  std::uint64_t suggestion_counter_ = 0;
  std::uint64_t id_salt_ = 0;
  TimestampMs started_at_ = 0;
};

// Installs the /v1 routes (auth, JSON parsing, CORS) on `server`.
void bind_routes(httplib::Server& server, AgentBuddyService& service);

}  // namespace agentbuddy
