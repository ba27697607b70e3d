#include "agentbuddy/service.hpp"

#include <chrono>
#include <fstream>
#include <random>
#include <sstream>

#include <httplib.h>

#include "agentbuddy/stopwords.hpp"

namespace agentbuddy {

using nlohmann::json;

namespace {

ApiResponse error(int status, const std::string& message) {
  return {status, json{{"error", message}}};
}

std::string trim(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

std::optional<std::string> string_field(const json& request, const char* key) {
  if (!request.is_object()) return std::nullopt;
  auto it = request.find(key);
  if (it == request.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

std::vector<RemoteArmConfig> parse_remote_arms(const std::string& value) {
  std::vector<RemoteArmConfig> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto at = item.find('@');
    if (at == std::string::npos || at == 0 || at + 1 == item.size()) {
      throw ValidationError("arms.remote entries must look like name@http://host:port/path");
    }
    out.push_back({item.substr(0, at), item.substr(at + 1)});
  }
  return out;
}

json spans_to_json(const std::vector<Span>& spans) {
  json out = json::array();
  for (const auto& s : spans) out.push_back({{"begin", s.begin}, {"end", s.end}});
  return out;
}

}  // namespace

TimestampMs system_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

const std::vector<std::string>& service_config_keys() {
  static const std::vector<std::string> keys = {
      "server.host",          "server.port",
      "token",                "corpus.path",
      "faq.path",             "log.path",
      "snapshot.path",        "policy.name",
      "policy.epsilon",       "policy.alpha",
      "policy.lambda",        "policy.thompson_v",
      "policy.p_min",         "policy.thompson_resamples",
      "policy.seed",          "featurizer.dimension",
      "featurizer.ngram_max", "featurizer.history_decay",
      "featurizer.lowercase", "featurizer.history_window",
      "clarifier.min_near_ties", "clarifier.near_tie_fraction",
      "clarifier.margin_fraction", "clarifier.candidate_pool",
      "clarifier.resolve_at", "clarifier.append_answers_to_history",
      "feedback.ttl_ms",      "arms.search_top_k",
      "arms.remote",          "arms.remote_timeout_ms",
  };
  return keys;
}

ServiceConfig service_config_from(const KeyValueConfig& kv) {
  ServiceConfig c;
  c.host = kv.get_string("server.host", c.host);
  c.port = static_cast<int>(kv.get_int("server.port", c.port));
  c.token = kv.get_string("token", "");
  if (c.token.empty()) throw ValidationError("token must be set (config key token or AGENTBUDDY_TOKEN)");

  auto required_path = [&](const char* key) {
    const auto value = kv.get(key);
    if (!value || value->empty()) throw ValidationError(std::string(key) + " is required");
    auto path = kv.resolve_path(*value);
    if (!std::filesystem::exists(path)) throw ValidationError(std::string(key) + " does not exist: " + path.string());
    return path;
  };
  c.corpus_path = required_path("corpus.path");
  c.faq_path = required_path("faq.path");

  const auto log_value = kv.get_string("log.path", "interactions.jsonl");
  c.log_path = kv.resolve_path(log_value);
  if (c.log_path.has_parent_path() && !std::filesystem::exists(c.log_path.parent_path())) {
    throw ValidationError("log.path directory does not exist: " + c.log_path.parent_path().string());
  }
  c.snapshot_path = kv.resolve_path(kv.get_string("snapshot.path", "policy.snapshot"));

  c.policy.kind = policy_kind_from_string(kv.get_string("policy.name", to_string(c.policy.kind)));
  c.policy.epsilon = kv.get_double("policy.epsilon", c.policy.epsilon);
  c.policy.alpha = kv.get_double("policy.alpha", c.policy.alpha);
  c.policy.lambda = kv.get_double("policy.lambda", c.policy.lambda);
  c.policy.thompson_v = kv.get_double("policy.thompson_v", c.policy.thompson_v);
  c.policy.p_min = kv.get_double("policy.p_min", c.policy.p_min);
  c.policy.thompson_resamples = static_cast<int>(kv.get_int("policy.thompson_resamples", c.policy.thompson_resamples));
  c.policy_seed = static_cast<std::uint64_t>(kv.get_int("policy.seed", static_cast<long long>(c.policy_seed)));
  validate(c.policy);

  c.featurizer.dimension = static_cast<std::size_t>(kv.get_int("featurizer.dimension", static_cast<long long>(c.featurizer.dimension)));
  c.featurizer.ngram_max = static_cast<int>(kv.get_int("featurizer.ngram_max", c.featurizer.ngram_max));
  c.featurizer.history_decay = kv.get_double("featurizer.history_decay", c.featurizer.history_decay);
  c.featurizer.lowercase = kv.get_bool("featurizer.lowercase", c.featurizer.lowercase);
  c.featurizer.history_window = static_cast<std::size_t>(kv.get_int("featurizer.history_window", static_cast<long long>(c.featurizer.history_window)));
  validate(c.featurizer);
  if (c.featurizer.dimension > kMaxPolicyDimension) {
    throw ValidationError("featurizer.dimension exceeds the dense policy limit of " +
                          std::to_string(kMaxPolicyDimension));
  }

  c.ambiguity.min_near_ties = static_cast<std::size_t>(kv.get_int("clarifier.min_near_ties", static_cast<long long>(c.ambiguity.min_near_ties)));
  c.ambiguity.near_tie_fraction = kv.get_double("clarifier.near_tie_fraction", c.ambiguity.near_tie_fraction);
  c.ambiguity.margin_fraction = kv.get_double("clarifier.margin_fraction", c.ambiguity.margin_fraction);
  c.candidate_pool = static_cast<std::size_t>(kv.get_int("clarifier.candidate_pool", static_cast<long long>(c.candidate_pool)));
  c.resolve_at = static_cast<std::size_t>(kv.get_int("clarifier.resolve_at", static_cast<long long>(c.resolve_at)));
  c.append_answers_to_history = kv.get_bool("clarifier.append_answers_to_history", c.append_answers_to_history);

  c.feedback_ttl_ms = kv.get_int("feedback.ttl_ms", c.feedback_ttl_ms);
  if (c.feedback_ttl_ms <= 0) throw ValidationError("feedback.ttl_ms must be positive");
  c.search_top_k = static_cast<std::size_t>(kv.get_int("arms.search_top_k", static_cast<long long>(c.search_top_k)));
  c.remote_arms = parse_remote_arms(kv.get_string("arms.remote", ""));
  c.remote_timeout_ms = static_cast<int>(kv.get_int("arms.remote_timeout_ms", c.remote_timeout_ms));
  return c;
}

// ---------------------------------------------------------------------------

AgentBuddyService::AgentBuddyService(ServiceConfig config, Clock clock)
    : config_(std::move(config)), clock_(std::move(clock)) {
  auto corpus = std::make_shared<const Corpus>(Corpus::load(config_.corpus_path));
  auto faq = std::make_shared<const FaqTable>(FaqTable::load(config_.faq_path));
  registry_.register_arm("search", ArmKind::search,
                         std::make_shared<SearchProvider>(corpus, config_.search_top_k));
  registry_.register_arm("faq", ArmKind::faq, std::make_shared<FaqProvider>(faq, FaqMatch::jaccard));
  registry_.register_arm("faq_overlap", ArmKind::faq,
                         std::make_shared<FaqProvider>(faq, FaqMatch::key_coverage));
  for (const auto& remote : config_.remote_arms) {
    registry_.register_arm(remote.name, ArmKind::remote,
                           std::make_shared<RemoteProvider>(remote.endpoint, config_.remote_timeout_ms));
  }
  corpus_ = std::move(corpus);
  init();
}

AgentBuddyService::AgentBuddyService(ServiceConfig config, ArmRegistry registry,
                                     std::shared_ptr<const Corpus> corpus, Clock clock)
    : config_(std::move(config)), clock_(std::move(clock)), registry_(std::move(registry)),
      corpus_(std::move(corpus)) {
  init();
}

void AgentBuddyService::init() {
  if (config_.token.empty()) throw ValidationError("service token must be non-empty");
  if (registry_.size() == 0) throw ValidationError("service needs at least one arm");
  validate(config_.featurizer);
  if (!config_.snapshot_path.empty() && std::filesystem::exists(config_.snapshot_path)) {
    std::ifstream in(config_.snapshot_path, std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    auto restored = PolicyState::restore(bytes.str());
    if (restored.dimension() != config_.featurizer.dimension || restored.arm_count() != registry_.size()) {
      throw ValidationError("policy snapshot shape (d=" + std::to_string(restored.dimension()) +
                            ", K=" + std::to_string(restored.arm_count()) +
                            ") does not match the configured featurizer and arms");
    }
    policy_.emplace(std::move(restored));
  } else {
    policy_.emplace(config_.policy, config_.featurizer.dimension, registry_.size(), config_.policy_seed);
  }
  if (!config_.log_path.empty()) log_.emplace(config_.log_path);
  std::random_device device;
  id_salt_ = (static_cast<std::uint64_t>(device()) << 32) ^ device();
  started_at_ = clock_();
}

bool AgentBuddyService::authorized(std::string_view header) const {
  constexpr std::string_view prefix = "Bearer ";
  if (!header.starts_with(prefix)) return false;
  const auto presented = header.substr(prefix.size());
  if (presented.size() != config_.token.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < presented.size(); ++i) {
    diff |= static_cast<unsigned char>(presented[i] ^ config_.token[i]);
  }
  return diff == 0;
}

std::string AgentBuddyService::next_suggestion_id() {
  const auto n = ++suggestion_counter_;
  return "sg-" + std::to_string(n) + "-" + hex_digest(fnv1a64(std::to_string(n)) ^ id_salt_).substr(0, 8);
}

AgentBuddyService::SessionState& AgentBuddyService::session_locked(const std::string& session_id,
                                                                   TimestampMs now) {
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) {
    it = sessions_.emplace(session_id, SessionState{Session(session_id, config_.featurizer.history_window), {}, now})
             .first;
  }
  it->second.last_seen = now;
  return it->second;
}

void AgentBuddyService::expire_pending() {
  std::lock_guard lock(writer_);
  expire_locked(clock_());
}

void AgentBuddyService::expire_locked(TimestampMs now) {
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (now - it->second.created_at <= config_.feedback_ttl_ms) {
      ++it;
      continue;
    }
    if (log_) {
      InteractionRecord record;
      record.ts = now;
      record.session_id = it->second.session_id;
      record.context = it->second.context;
      record.arm_id = it->second.arm_id;
      record.propensity = it->second.propensity;
      record.policy_name = policy_->policy_name();
      try {
        log_->append(std::move(record));
      } catch (const StorageError&) {
        ++it;  // retried on the next sweep
        continue;
      }
    }
    it = pending_.erase(it);
  }
  std::erase_if(finalized_, [&](const auto& kv) { return now - kv.second > config_.feedback_ttl_ms; });
  std::erase_if(sessions_, [&](const auto& kv) { return now - kv.second.last_seen > config_.feedback_ttl_ms; });
}

ApiResponse AgentBuddyService::handle_suggest(const json& request) {
  const auto session_id = string_field(request, "session_id");
  const auto utterance = string_field(request, "utterance");
  if (!session_id || session_id->empty()) return error(422, "session_id must be a non-empty string");
  if (!utterance || trim(*utterance).empty()) return error(422, "utterance must be a non-empty string");
  const Query query{*session_id, *utterance, clock_()};

  FeatureVector context;
  std::vector<ArmId> available;
  for (const auto& d : registry_.descriptors()) available.push_back(d.arm_id);
  {
    std::lock_guard lock(writer_);
    expire_locked(query.timestamp);
    auto& state = session_locked(query.session_id, query.timestamp);
    context = build_context(query, state.session, config_.featurizer);
  }

  // Unavailable arms are masked for this round and the choice is redrawn
  // over the rest. Providers run outside the writer lock.
  Choice choice;
  ArmAnswer answer;
  for (;;) {
    if (available.empty()) return error(503, "all arms are unavailable");
    {
      std::lock_guard lock(writer_);
      choice = policy_->choose(context, available);
    }
    try {
      answer = registry_.provider(choice.arm_id).answer(query.utterance);
      break;
    } catch (const ArmUnavailable&) {
      std::erase(available, choice.arm_id);
    }
  }

  const auto query_tokens = tokenize(query.utterance);
  Suggestion suggestion;
  suggestion.arm_id = choice.arm_id;
  suggestion.answer_text = answer.answer_text;
  suggestion.propensity = choice.propensity;
  suggestion.highlights = highlight_span(corpus_ ? corpus_->resolve(query_tokens) : query_tokens,
                                         answer.answer_text);

  std::optional<Clarification> clarification;
  if (corpus_ && !corpus_->documents().empty()) {
    std::vector<std::string> content;
    for (const auto& t : query_tokens) {
      if (!is_stopword(t)) content.push_back(t);
    }
    const auto hits = corpus_->search(content, config_.candidate_pool);
    std::vector<double> scores;
    for (const auto& h : hits) scores.push_back(h.score);
    if (is_ambiguous(scores, config_.ambiguity)) {
      std::vector<Candidate> pool;
      for (const auto& h : hits) {
        const auto& doc = corpus_->documents()[h.doc_index];
        pool.push_back(CandidateSet::make_candidate(doc.doc_id, doc.title + " " + doc.body));
      }
      CandidateSet candidates(std::move(pool));
      if (auto filter = best_filter(candidates)) {
        suggestion.clarifying_question = render_question(*filter);
        clarification.emplace(Clarification{std::move(candidates), *filter});
      }
    }
  }

  json body;
  {
    std::lock_guard lock(writer_);
    suggestion.suggestion_id = next_suggestion_id();
    auto& state = session_locked(query.session_id, query.timestamp);
    state.session.push(query.utterance);
    state.clarification = clarification;
    pending_.emplace(suggestion.suggestion_id,
                     Pending{query.session_id, context, choice.arm_id, choice.propensity, query.timestamp});
  }

  body["suggestion_id"] = suggestion.suggestion_id;
  body["arm_id"] = suggestion.arm_id;
  body["arm_name"] = registry_.descriptor(suggestion.arm_id).name;
  body["answer_text"] = suggestion.answer_text;
  body["highlights"] = spans_to_json(suggestion.highlights);
  body["propensity"] = suggestion.propensity;
  if (suggestion.clarifying_question) {
    body["clarifying_question"] = *suggestion.clarifying_question;
    body["clarifying_term"] = clarification->filter.term;
  }
  return {200, body};
}

ApiResponse AgentBuddyService::handle_feedback(const json& request) {
  const auto suggestion_id = string_field(request, "suggestion_id");
  if (!suggestion_id) return error(422, "suggestion_id must be a string");
  if (!request.contains("stars") || !request["stars"].is_number_integer()) {
    return error(422, "stars must be an integer in 1..5");
  }
  const auto stars_value = request["stars"].get<long long>();
  if (stars_value < 1 || stars_value > 5) return error(422, "stars must be an integer in 1..5");
  const int stars = static_cast<int>(stars_value);
  const double reward = normalize_stars(stars);

  std::lock_guard lock(writer_);
  const auto now = clock_();
  expire_locked(now);
  if (finalized_.contains(*suggestion_id)) return {200, json{{"ok", true}, {"updated", false}}};
  auto it = pending_.find(*suggestion_id);
  if (it == pending_.end()) return error(404, "unknown or expired suggestion");
  const auto& pending = it->second;

  if (log_) {
    InteractionRecord record;
    record.ts = now;
    record.session_id = pending.session_id;
    record.context = pending.context;
    record.arm_id = pending.arm_id;
    record.propensity = pending.propensity;
    record.reward = reward;
    record.policy_name = policy_->policy_name();
    record.stars = stars;
    record.seed_state_digest = hex_digest(fnv1a64(policy_->rng().state()));
    try {
      log_->append(std::move(record));
    } catch (const StorageError& e) {
      return error(503, e.what());
    }
  }
  policy_->update(pending.context, pending.arm_id, pending.propensity, reward);
  ++rounds_;
  stars_total_ += static_cast<std::uint64_t>(stars);
  finalized_.emplace(*suggestion_id, now);
  pending_.erase(it);
  return {200, json{{"ok", true}, {"updated", true}}};
}

json AgentBuddyService::resolved_answers(const CandidateSet& candidates) const {
  json out = json::array();
  for (const auto& id : candidates.doc_ids()) {
    const Document* doc = corpus_ ? corpus_->find(id) : nullptr;
    out.push_back({{"doc_id", id}, {"title", doc ? doc->title : std::string{}}});
  }
  return out;
}

ApiResponse AgentBuddyService::handle_clarify_answer(const json& request) {
  const auto session_id = string_field(request, "session_id");
  const auto term = string_field(request, "term");
  const auto answer_text = string_field(request, "answer");
  if (!session_id || !term || !answer_text) return error(422, "session_id, term and answer are required strings");
  if (*answer_text != "yes" && *answer_text != "no") return error(422, "answer must be yes or no");
  const auto answer = *answer_text == "yes" ? ClarifyAnswer::yes : ClarifyAnswer::no;

  std::lock_guard lock(writer_);
  const auto now = clock_();
  expire_locked(now);
  auto it = sessions_.find(*session_id);
  if (it == sessions_.end() || !it->second.clarification) return error(404, "no active clarification");
  auto& state = it->second;
  state.last_seen = now;

  const auto& current = state.clarification->candidates;
  std::optional<CandidateSet> remaining;
  try {
    remaining.emplace(apply_filter(current, make_filter(current, *term), answer));
  } catch (const ContradictionError& e) {
    return error(409, e.what());
  }
  if (config_.append_answers_to_history && answer == ClarifyAnswer::yes) state.session.push(*term);

  json body{{"remaining_count", remaining->size()}};
  std::optional<Filter> next;
  if (remaining->size() > config_.resolve_at) next = best_filter(*remaining);
  if (next) {
    body["next_question"] = render_question(*next);
    body["next_term"] = next->term;
    state.clarification.emplace(Clarification{std::move(*remaining), *next});
  } else {
    body["resolved_answer"] = resolved_answers(*remaining);
    state.clarification.reset();
  }
  return {200, body};
}

ApiResponse AgentBuddyService::handle_stats() {
  std::lock_guard lock(writer_);
  const auto now = clock_();
  json pulls = json::array();
  for (auto p : policy_->pull_counts()) pulls.push_back(p);
  json body{{"rounds", rounds_},
            {"pulls", pulls},
            {"policy_name", policy_->policy_name()},
            {"pending", pending_.size()},
            {"uptime_s", static_cast<double>(now - started_at_) / 1000.0}};
  body["mean_stars"] = rounds_ == 0 ? json(nullptr)
                                    : json(static_cast<double>(stars_total_) / static_cast<double>(rounds_));
  return {200, body};
}

ApiResponse AgentBuddyService::handle_arms() const {
  json arms = json::array();
  for (const auto& d : registry_.descriptors()) {
    arms.push_back({{"arm_id", d.arm_id}, {"name", d.name}, {"kind", to_string(d.kind)}});
  }
  return {200, json{{"arms", arms}}};
}

void AgentBuddyService::save_snapshot() {
  if (config_.snapshot_path.empty()) return;
  std::string bytes;
  {
    std::lock_guard lock(writer_);
    bytes = policy_->snapshot();
  }
  auto tmp = config_.snapshot_path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << bytes;
    if (!out.flush()) throw StorageError("cannot write snapshot " + tmp.string());
  }
  std::filesystem::rename(tmp, config_.snapshot_path);
}

std::vector<std::uint64_t> AgentBuddyService::pull_counts() const {
  std::lock_guard lock(writer_);
  return policy_->pull_counts();
}

std::string AgentBuddyService::policy_digest() const {
  std::lock_guard lock(writer_);
  return policy_->digest();
}

// ---------------------------------------------------------------------------

void bind_routes(httplib::Server& server, AgentBuddyService& service) {
  auto reply = [](httplib::Response& res, const ApiResponse& api) {
    res.status = api.status;
    res.set_content(api.body.dump(), "application/json");
  };
  auto guarded = [&service, reply](auto handler) {
    return [&service, reply, handler](const httplib::Request& req, httplib::Response& res) {
      if (!service.authorized(req.get_header_value("Authorization"))) {
        reply(res, error(401, "missing or invalid bearer token"));
        return;
      }
      handler(req, res);
    };
  };
  auto with_body = [reply](auto call) {
    return [reply, call](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body, nullptr, false);
      if (body.is_discarded()) {
        reply(res, error(400, "request body is not valid JSON"));
        return;
      }
      reply(res, call(body));
    };
  };

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Post("/v1/suggest", guarded(with_body([&service](const json& b) { return service.handle_suggest(b); })));
  server.Post("/v1/feedback", guarded(with_body([&service](const json& b) { return service.handle_feedback(b); })));
  server.Post("/v1/clarify/answer",
              guarded(with_body([&service](const json& b) { return service.handle_clarify_answer(b); })));
  server.Get("/v1/stats", guarded([&service, reply](const httplib::Request&, httplib::Response& res) {
               reply(res, service.handle_stats());
             }));
  server.Get("/v1/arms", guarded([&service, reply](const httplib::Request&, httplib::Response& res) {
               reply(res, service.handle_arms());
             }));
  server.set_exception_handler([reply](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      reply(res, error(500, e.what()));
    }
  });
}

}  // namespace agentbuddy
