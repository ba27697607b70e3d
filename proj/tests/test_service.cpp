#include <doctest.h>

#include <atomic>
#include <set>
#include <filesystem>
#include <fstream>
#include <thread>

#include "agentbuddy/service.hpp"

#include <httplib.h>

using namespace agentbuddy;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = AGENTBUDDY_SOURCE_DIR;

struct FakeClock {
  std::shared_ptr<std::atomic<TimestampMs>> now = std::make_shared<std::atomic<TimestampMs>>(1'000'000);
  Clock clock() const {
    auto n = now;
    return [n] { return n->load(); };
  }
  void advance(TimestampMs ms) const { *now += ms; }
};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "agentbuddy_test_service" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ServiceConfig base_config(const fs::path& dir, PolicyKind kind = PolicyKind::linucb) {
  ServiceConfig c;
  c.token = "t0ken";
  c.corpus_path = kSource / "data/demo_corpus.jsonl";
  c.faq_path = kSource / "data/demo_faq.jsonl";
  c.log_path = dir / "interactions.jsonl";
  c.snapshot_path = dir / "policy.snapshot";
  c.policy.kind = kind;
  return c;
}

std::vector<json> log_lines(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

std::string suggest_id(AgentBuddyService& s, const std::string& session, const std::string& utterance) {
  const auto r = s.handle_suggest({{"session_id", session}, {"utterance", utterance}});
  REQUIRE(r.status == 200);
  return r.body["suggestion_id"].get<std::string>();
}

struct Broken final : AnswerProvider {
  ArmAnswer answer(const std::string&) const override { throw ArmUnavailable("down"); }
};

const char* kQuestions[] = {"How can I receive payment?", "How do I pay a suplier invoice?",
                            "reset my password", "run payroll for this month", "sales tax rates",
                            "connect my bank feed", "send an invoice by email", "1099 forms"};

}  // namespace

TEST_CASE("bearer token check") {
  const auto dir = scratch("auth");
  AgentBuddyService s(base_config(dir));
  CHECK(s.authorized("Bearer t0ken"));
  CHECK_FALSE(s.authorized("Bearer t0kem"));
  CHECK_FALSE(s.authorized("Bearer t0ken2"));
  CHECK_FALSE(s.authorized("t0ken"));
  CHECK_FALSE(s.authorized(""));
}

TEST_CASE("suggest") {
  const auto dir = scratch("suggest");
  AgentBuddyService s(base_config(dir));
  const auto r = s.handle_suggest({{"session_id", "s1"}, {"utterance", "How can I receive payment?"}});
  REQUIRE(r.status == 200);
  const auto& b = r.body;
  CHECK(b["suggestion_id"].is_string());
  CHECK(b["arm_id"].get<int>() >= 0);
  CHECK(b["arm_id"].get<std::size_t>() < s.registry().size());
  CHECK_FALSE(b["answer_text"].get<std::string>().empty());
  CHECK(b["propensity"].get<double>() > 0.0);
  CHECK(b["propensity"].get<double>() <= 1.0);
  const auto text = b["answer_text"].get<std::string>();
  for (const auto& h : b["highlights"]) {
    CHECK(h["begin"].get<std::size_t>() < h["end"].get<std::size_t>());
    CHECK(h["end"].get<std::size_t>() <= text.size());
  }
  // four near-tied payment documents: ask about the balanced splitter
  CHECK(b["clarifying_question"] == "Does your request involve 'wire'?");
  CHECK(b["clarifying_term"] == "wire");

  CHECK(s.handle_suggest({{"session_id", "s1"}, {"utterance", "   "}}).status == 422);
  CHECK(s.handle_suggest({{"session_id", ""}, {"utterance", "hi"}}).status == 422);
  CHECK(s.handle_suggest({{"utterance", "hi"}}).status == 422);
  CHECK(s.handle_suggest({{"session_id", "s"}, {"utterance", 5}}).status == 422);
  CHECK(s.handle_suggest(json::array()).status == 422);

  const auto plain = s.handle_suggest({{"session_id", "s2"}, {"utterance", "reset my password"}});
  CHECK(plain.status == 200);
  CHECK_FALSE(plain.body.contains("clarifying_question"));
}

TEST_CASE("remote arms that are down are masked") {
  const auto dir = scratch("masking");
  auto c = base_config(dir, PolicyKind::uniform);
  for (int i = 0; i < 7; ++i) c.remote_arms.push_back({"remote" + std::to_string(i), "http://127.0.0.1:1/answer"});
  c.remote_timeout_ms = 300;
  AgentBuddyService s(c);
  REQUIRE(s.registry().size() == 10);
  for (int i = 0; i < 20; ++i) {
    const auto r = s.handle_suggest({{"session_id", "m"}, {"utterance", kQuestions[i % 8]}});
    REQUIRE(r.status == 200);
    CHECK(r.body["arm_id"].get<ArmId>() < 3);
  }

  ArmRegistry broken;
  broken.register_arm("a", ArmKind::remote, std::make_shared<Broken>());
  broken.register_arm("b", ArmKind::remote, std::make_shared<Broken>());
  auto cfg = base_config(scratch("all_down"));
  cfg.log_path.clear();
  cfg.snapshot_path.clear();
  AgentBuddyService down(cfg, std::move(broken), nullptr);
  CHECK(down.handle_suggest({{"session_id", "x"}, {"utterance", "hello"}}).status == 503);
}

TEST_CASE("feedback, stats and idempotence") {
  const auto dir = scratch("feedback");
  AgentBuddyService s(base_config(dir));
  auto stats = s.handle_stats().body;
  CHECK(stats["rounds"] == 0);
  CHECK(stats["mean_stars"].is_null());

  const auto id = suggest_id(s, "s1", "How can I receive payment?");
  const auto before = s.pull_counts();
  const auto first = s.handle_feedback({{"suggestion_id", id}, {"stars", 5}});
  CHECK(first.status == 200);
  CHECK(first.body["updated"] == true);
  const auto after = s.pull_counts();
  std::uint64_t sum_before = 0, sum_after = 0;
  for (auto p : before) sum_before += p;
  for (auto p : after) sum_after += p;
  CHECK(sum_after == sum_before + 1);

  const auto again = s.handle_feedback({{"suggestion_id", id}, {"stars", 1}});
  CHECK(again.status == 200);
  CHECK(again.body["updated"] == false);
  CHECK(s.pull_counts() == after);

  stats = s.handle_stats().body;
  CHECK(stats["rounds"] == 1);
  CHECK(stats["mean_stars"] == 5.0);
  CHECK(stats["pending"] == 0);

  const auto other = suggest_id(s, "s1", "reset my password");
  CHECK(s.handle_feedback({{"suggestion_id", other}, {"stars", 6}}).status == 422);
  CHECK(s.handle_feedback({{"suggestion_id", other}, {"stars", 0}}).status == 422);
  CHECK(s.handle_feedback({{"suggestion_id", other}, {"stars", 2.5}}).status == 422);
  CHECK(s.handle_feedback({{"suggestion_id", other}, {"stars", "5"}}).status == 422);
  CHECK(s.handle_feedback({{"suggestion_id", other}}).status == 422);
  CHECK(s.handle_feedback({{"suggestion_id", "sg-nope"}, {"stars", 3}}).status == 404);
  CHECK(s.handle_stats().body["pending"] == 1);

  const auto arms = s.handle_arms().body["arms"];
  REQUIRE(arms.size() == 3);
  CHECK(arms[0]["name"] == "search");
  CHECK(arms[1]["kind"] == "faq");
}

TEST_CASE("duplicate feedback leaves the same policy state as a single call") {
  const auto once_cfg = base_config(scratch("once"));
  const auto many_cfg = base_config(scratch("many"));
  AgentBuddyService once(once_cfg);
  AgentBuddyService many(many_cfg);
  for (int i = 0; i < 12; ++i) {
    const auto a = suggest_id(once, "s", kQuestions[i % 8]);
    const auto b = suggest_id(many, "s", kQuestions[i % 8]);
    const int stars = 1 + i % 5;
    CHECK(once.handle_feedback({{"suggestion_id", a}, {"stars", stars}}).body["updated"] == true);
    for (int k = 0; k < 5; ++k) many.handle_feedback({{"suggestion_id", b}, {"stars", stars}});
  }
  CHECK(once.policy_digest() == many.policy_digest());
  CHECK(once.pull_counts() == many.pull_counts());
  CHECK(log_lines(once_cfg.log_path).size() == 12);
  CHECK(log_lines(many_cfg.log_path).size() == 12);
}

TEST_CASE("accounting identities over suggest, feedback and expiry") {
  const auto dir = scratch("accounting");
  FakeClock clock;
  auto cfg = base_config(dir, PolicyKind::lin_thompson);
  cfg.feedback_ttl_ms = 60'000;
  AgentBuddyService s(cfg, clock.clock());

  int rated = 0;
  double reward_total = 0.0;
  for (int i = 0; i < 40; ++i) {
    const auto id = suggest_id(s, "s" + std::to_string(i % 3), kQuestions[i % 8]);
    clock.advance(100);
    if (i % 4 == 3) continue;  // never rated
    const int stars = 1 + (i * 7) % 5;
    REQUIRE(s.handle_feedback({{"suggestion_id", id}, {"stars", stars}}).body["updated"] == true);
    s.handle_feedback({{"suggestion_id", id}, {"stars", stars}});
    ++rated;
    reward_total += (stars - 1) / 4.0;
  }

  const auto stats = s.handle_stats().body;
  CHECK(stats["rounds"] == rated);
  CHECK(stats["pending"] == 10);
  std::uint64_t pulls = 0;
  for (auto p : s.pull_counts()) pulls += p;
  CHECK(pulls == static_cast<std::uint64_t>(rated));

  // expiry finalizes the unrated ones as rewardless records
  clock.advance(cfg.feedback_ttl_ms + 1);
  s.expire_pending();
  CHECK(s.handle_stats().body["pending"] == 0);

  const auto lines = log_lines(cfg.log_path);
  CHECK(lines.size() == 40);
  int rewarded = 0;
  double logged_reward = 0.0;
  std::uint64_t ordinal = 0;
  for (const auto& l : lines) {
    CHECK(l["ordinal"] == ordinal++);
    if (!l["reward"].is_null()) {
      ++rewarded;
      logged_reward += l["reward"].get<double>();
      CHECK(l["reward"].get<double>() == (l["stars"].get<int>() - 1) / 4.0);
    } else {
      CHECK(l["stars"].is_null());
    }
  }
  CHECK(rewarded == rated);
  CHECK(logged_reward == doctest::Approx(reward_total));
  std::uint64_t per_arm_total = 0;
  const auto per_arm = s.pull_counts();
  for (std::size_t a = 0; a < per_arm.size(); ++a) {
    std::uint64_t from_log = 0;
    for (const auto& l : lines) from_log += (!l["reward"].is_null() && l["arm_id"] == a) ? 1 : 0;
    CHECK(per_arm[a] == from_log);
    per_arm_total += per_arm[a];
  }
  CHECK(per_arm_total == static_cast<std::uint64_t>(rewarded));
}

TEST_CASE("expired suggestions reject late feedback") {
  const auto dir = scratch("ttl");
  FakeClock clock;
  auto cfg = base_config(dir);
  cfg.feedback_ttl_ms = 1000;
  AgentBuddyService s(cfg, clock.clock());
  const auto id = suggest_id(s, "s", "reset my password");
  clock.advance(1001);
  CHECK(s.handle_feedback({{"suggestion_id", id}, {"stars", 4}}).status == 404);
  const auto lines = log_lines(cfg.log_path);
  REQUIRE(lines.size() == 1);
  CHECK(lines[0]["reward"].is_null());
  CHECK(s.handle_stats().body["rounds"] == 0);

  const auto inside = suggest_id(s, "s", "reset my password");
  clock.advance(1000);
  CHECK(s.handle_feedback({{"suggestion_id", inside}, {"stars", 4}}).body["updated"] == true);
}

TEST_CASE("clarification flow") {
  const auto dir = scratch("clarify");
  auto cfg = base_config(dir);
  cfg.resolve_at = 1;
  AgentBuddyService s(cfg);
  CHECK(s.handle_clarify_answer({{"session_id", "c"}, {"term", "wire"}, {"answer", "yes"}}).status == 404);

  const auto r = s.handle_suggest({{"session_id", "c"}, {"utterance", "How can I receive payment?"}});
  REQUIRE(r.body["clarifying_term"] == "wire");
  CHECK(s.handle_clarify_answer({{"session_id", "c"}, {"term", "wire"}, {"answer", "maybe"}}).status == 422);
  CHECK(s.handle_clarify_answer({{"session_id", "c"}, {"term", "wire"}}).status == 422);

  const auto yes = s.handle_clarify_answer({{"session_id", "c"}, {"term", "wire"}, {"answer", "yes"}});
  REQUIRE(yes.status == 200);
  CHECK(yes.body["remaining_count"] == 2);
  CHECK(yes.body["next_term"] == "ach");
  CHECK(yes.body["next_question"] == "Does your request involve 'ach'?");
  CHECK_FALSE(yes.body.contains("resolved_answer"));

  // both remaining documents mention wire
  CHECK(s.handle_clarify_answer({{"session_id", "c"}, {"term", "wire"}, {"answer", "no"}}).status == 409);

  const auto done = s.handle_clarify_answer({{"session_id", "c"}, {"term", "ach"}, {"answer", "no"}});
  REQUIRE(done.status == 200);
  CHECK(done.body["remaining_count"] == 1);
  CHECK_FALSE(done.body.contains("next_question"));
  REQUIRE(done.body["resolved_answer"].size() == 1);
  CHECK(done.body["resolved_answer"][0]["doc_id"] == "pay-wire");
  CHECK(done.body["resolved_answer"][0]["title"] == "Receive payment by wire");

  CHECK(s.handle_clarify_answer({{"session_id", "c"}, {"term", "ach"}, {"answer", "no"}}).status == 404);
}

TEST_CASE("default resolve threshold returns the candidates after one answer") {
  AgentBuddyService s(base_config(scratch("resolve")));
  s.handle_suggest({{"session_id", "c"}, {"utterance", "How can I receive payment?"}});
  const auto yes = s.handle_clarify_answer({{"session_id", "c"}, {"term", "wire"}, {"answer", "yes"}});
  CHECK(yes.body["remaining_count"] == 2);
  REQUIRE(yes.body["resolved_answer"].size() == 2);
  std::set<std::string> ids;
  for (const auto& a : yes.body["resolved_answer"]) ids.insert(a["doc_id"].get<std::string>());
  CHECK(ids == std::set<std::string>{"pay-ach-wire", "pay-wire"});
}

TEST_CASE("snapshot survives a restart") {
  const auto dir = scratch("restart");
  const auto cfg = base_config(dir, PolicyKind::epsilon_greedy);
  std::string digest;
  std::vector<std::uint64_t> pulls;
  {
    AgentBuddyService s(cfg);
    for (int i = 0; i < 10; ++i) {
      s.handle_feedback({{"suggestion_id", suggest_id(s, "s", kQuestions[i % 8])}, {"stars", 1 + i % 5}});
    }
    s.save_snapshot();
    digest = s.policy_digest();
    pulls = s.pull_counts();
  }
  CHECK(fs::exists(cfg.snapshot_path));
  AgentBuddyService restored(cfg);
  CHECK(restored.policy_digest() == digest);
  CHECK(restored.pull_counts() == pulls);
  // the log continues where it stopped
  restored.handle_feedback({{"suggestion_id", suggest_id(restored, "s", "sales tax")}, {"stars", 3}});
  const auto lines = log_lines(cfg.log_path);
  CHECK(lines.back()["ordinal"] == 10);

  auto other = cfg;
  other.featurizer.dimension = 32;
  CHECK_THROWS_AS(AgentBuddyService{other}, ValidationError);
  std::ofstream(cfg.snapshot_path) << "garbage";
  CHECK_THROWS_AS(AgentBuddyService{cfg}, SnapshotError);
}

TEST_CASE("concurrent clients keep the books balanced") {
  const auto dir = scratch("concurrent");
  auto cfg = base_config(dir, PolicyKind::lin_thompson);
  AgentBuddyService s(cfg);
  std::atomic<int> rated{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) {
        const auto r = s.handle_suggest({{"session_id", "t" + std::to_string(t)}, {"utterance", kQuestions[(t + i) % 8]}});
        if (r.status != 200) continue;
        const auto id = r.body["suggestion_id"].get<std::string>();
        if (i % 5 == 0) continue;
        if (s.handle_feedback({{"suggestion_id", id}, {"stars", 1 + i % 5}}).body["updated"] == true) ++rated;
        s.handle_feedback({{"suggestion_id", id}, {"stars", 1 + i % 5}});
        s.handle_stats();
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(rated == 8 * 20);
  const auto stats = s.handle_stats().body;
  CHECK(stats["rounds"] == rated.load());
  CHECK(stats["pending"] == 8 * 5);
  std::uint64_t pulls = 0;
  for (auto p : s.pull_counts()) pulls += p;
  CHECK(pulls == static_cast<std::uint64_t>(rated.load()));
  const auto lines = log_lines(cfg.log_path);
  CHECK(lines.size() == static_cast<std::size_t>(rated.load()));
  for (std::size_t i = 0; i < lines.size(); ++i) CHECK(lines[i]["ordinal"] == i);
}

TEST_CASE("config loading") {
  const auto reference = kSource / "config/agentbuddy.conf";
  auto kv = KeyValueConfig::load(reference);
  const auto c = service_config_from(kv);
  CHECK(c.remote_arms.size() == 7);
  CHECK(c.featurizer.dimension == 64);
  CHECK(c.corpus_path == kSource / "config/../data/demo_corpus.jsonl");

  auto no_token = kv;
  no_token.set("token", "");
  CHECK_THROWS_AS(service_config_from(no_token), ValidationError);
  auto missing = kv;
  missing.set("corpus.path", "nope.jsonl");
  CHECK_THROWS_AS(service_config_from(missing), ValidationError);
  auto big = kv;
  big.set("featurizer.dimension", "4096");
  CHECK_THROWS_AS(service_config_from(big), ValidationError);
  auto bad_remote = kv;
  bad_remote.set("arms.remote", "justaname");
  CHECK_THROWS_AS(service_config_from(bad_remote), ValidationError);

  for (const auto& key : service_config_keys()) {
    if (key != "arms.remote") CHECK_MESSAGE(kv.contains(key), key);
  }
}

TEST_CASE("http routes") {
  const auto dir = scratch("http");
  AgentBuddyService service(base_config(dir));
  httplib::Server server;
  bind_routes(server, service);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const httplib::Headers auth = {{"Authorization", "Bearer t0ken"}};

  auto unauth = client.Get("/v1/stats");
  REQUIRE(unauth);
  CHECK(unauth->status == 401);
  CHECK(client.Get("/v1/stats", {{"Authorization", "Bearer wrong"}})->status == 401);
  CHECK(client.Post("/v1/suggest", R"({"session_id":"h","utterance":"hi"})", "application/json")->status == 401);

  CHECK(client.Post("/v1/suggest", auth, "{not json", "application/json")->status == 400);

  auto stats = client.Get("/v1/stats", auth);
  REQUIRE(stats);
  CHECK(stats->status == 200);
  CHECK(json::parse(stats->body)["rounds"] == 0);
  CHECK(stats->get_header_value("Access-Control-Allow-Origin") == "*");

  auto suggest = client.Post("/v1/suggest", auth, R"({"session_id":"h","utterance":"How can I receive payment?"})",
                             "application/json");
  REQUIRE(suggest);
  REQUIRE(suggest->status == 200);
  const auto body = json::parse(suggest->body);
  const json feedback = {{"suggestion_id", body["suggestion_id"]}, {"stars", 4}};
  auto fb = client.Post("/v1/feedback", auth, feedback.dump(), "application/json");
  CHECK(json::parse(fb->body)["updated"] == true);
  fb = client.Post("/v1/feedback", auth, feedback.dump(), "application/json");
  CHECK(json::parse(fb->body)["updated"] == false);
  CHECK(json::parse(client.Get("/v1/stats", auth)->body)["rounds"] == 1);

  auto clarify = client.Post("/v1/clarify/answer", auth, R"({"session_id":"h","term":"wire","answer":"yes"})",
                             "application/json");
  CHECK(clarify->status == 200);
  CHECK(json::parse(clarify->body)["remaining_count"] == 2);

  CHECK(client.Post("/v1/suggest", auth, R"({"session_id":"h","utterance":""})", "application/json")->status == 422);
  CHECK(json::parse(client.Get("/v1/arms", auth)->body)["arms"].size() == 3);

  auto preflight = client.Options("/v1/suggest");
  REQUIRE(preflight);
  CHECK(preflight->status == 204);

  server.stop();
  th.join();
}
