#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <thread>

#include "agentbuddy/arms.hpp"
#include "agentbuddy/featurizer.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace agentbuddy;

namespace {

const std::string kDemoCorpus = std::string(AGENTBUDDY_SOURCE_DIR) + "/data/demo_corpus.jsonl";

Document doc(std::string id, std::string title, std::string body) {
  return Document{std::move(id), std::move(title), std::move(body), {}};
}

struct Echo final : AnswerProvider {
  ArmAnswer answer(const std::string& u) const override { return {u, {}, 1.0, true}; }
};

// Serves canned responses on a random localhost port for the lifetime of the
// object.
class Stub {
 public:
  Stub() {
    server_.Post("/ok", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      res.set_content(nlohmann::json{{"answer_text", "ok: " + body["utterance"].get<std::string>()},
                                     {"score", 0.75}}
                          .dump(),
                      "application/json");
    });
    server_.Post("/no_text", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"score": 1.0})", "application/json");
    });
    server_.Post("/bad_score", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"answer_text": "x", "score": "high"})", "application/json");
    });
    server_.Post("/garbage", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json", "text/plain");
    });
    server_.Post("/error", [](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
      res.set_content(R"({"answer_text": "x", "score": 1})", "application/json");
    });
    server_.Post("/slow", [](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(600));
      res.set_content(R"({"answer_text": "late", "score": 1})", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~Stub() {
    server_.stop();
    thread_.join();
  }
  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("arm registry assigns dense ids") {
  ArmRegistry reg;
  auto p = std::make_shared<Echo>();
  CHECK(reg.register_arm("arm0", ArmKind::remote, p) == 0);
  for (ArmId i = 1; i < 10; ++i) CHECK(reg.register_arm("arm" + std::to_string(i), ArmKind::remote, p) == i);
  CHECK(reg.size() == 10);
  CHECK(reg.descriptor(9).name == "arm9");
  CHECK_THROWS_AS(reg.register_arm("arm3", ArmKind::faq, p), RegistrationError);
  CHECK_THROWS_AS(reg.register_arm("null", ArmKind::faq, nullptr), RegistrationError);
  CHECK(reg.size() == 10);
}

TEST_CASE("bm25 hand evaluation") {
  // N = 2, df(payment) = 1, both docs have the average length, tf = 1:
  // idf = ln 2, tf part = 2.2 / 2.2 = 1
  Corpus corpus({doc("d1", "", "payment due"), doc("d2", "", "tax report")});
  const auto& d1 = corpus.documents()[0];
  CHECK(bm25_score({"payment"}, d1, corpus.stats()) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bm25_score({"missing"}, d1, corpus.stats()) == 0.0);
  CHECK(bm25_score({}, d1, corpus.stats()) == 0.0);
  // repeated query terms count once
  CHECK(bm25_score({"payment", "payment"}, d1, corpus.stats()) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("property: bm25 is non-negative and grows with term frequency") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 300; ++trial) {
    CorpusStats stats;
    stats.document_count = 1 + gen() % 50;
    stats.document_frequency["t"] = 1 + gen() % stats.document_count;
    stats.average_length = 1.0 + static_cast<double>(gen() % 40);
    const std::size_t length = 2 + gen() % 30;
    double previous = -1.0;
    for (std::size_t tf = 0; tf <= length; ++tf) {
      Document d;
      d.tokens.assign(tf, "t");
      d.tokens.resize(length, "filler");
      const double s = bm25_score({"t"}, d, stats);
      CHECK(s >= 0.0);
      CHECK(s > previous);
      previous = s;
    }
  }
}

TEST_CASE("trigram similarity and fuzzy resolution") {
  CHECK(trigram_jaccard("suplier", "supplier") == doctest::Approx(4.0 / 7.0));
  const Vocabulary vocab(std::set<std::string>{"invoice", "supplier", "payment"});
  CHECK(fuzzy_resolve("suplier", vocab) == "supplier");
  CHECK(fuzzy_resolve("payment", vocab) == "payment");
  CHECK_FALSE(fuzzy_resolve("zzz", vocab).has_value());
  const auto m = vocab.closest("suplier");
  REQUIRE(m.has_value());
  CHECK(m->similarity == doctest::Approx(4.0 / 7.0));

  // single typos in short words fall below the trigram threshold but are
  // one edit away
  CHECK(trigram_jaccard("paymnt", "payment") < kFuzzyThreshold);
  CHECK(fuzzy_resolve("paymnt", vocab) == "payment");
  CHECK(fuzzy_resolve("invocie", vocab) == "invoice");
  CHECK(fuzzy_resolve("invoixe", vocab) == "invoice");
  CHECK_FALSE(fuzzy_resolve("pay", vocab).has_value());

  // equal similarity: lexicographically smaller wins
  const Vocabulary tied(std::set<std::string>{"abcx", "abcy"});
  CHECK(fuzzy_resolve("abc", tied, 0.1) == "abcx");
}

TEST_CASE("property: single-edit misspellings of corpus terms are recovered") {
  const auto corpus = Corpus::load(kDemoCorpus);
  std::vector<std::string> terms;
  for (const auto& t : corpus.vocabulary().terms()) {
    if (t.size() >= 6) terms.push_back(t);
  }
  REQUIRE(terms.size() >= 20);

  std::mt19937_64 gen(20240607);
  const std::string letters = "abcdefghijklmnopqrstuvwxyz";
  int recovered = 0;
  const int trials = 2000;
  for (int i = 0; i < trials; ++i) {
    std::string word = terms[gen() % terms.size()];
    const std::string original = word;
    const std::size_t pos = gen() % word.size();
    const char letter = letters[gen() % letters.size()];
    switch (gen() % 3) {
      case 0: word.erase(pos, 1); break;
      case 1: word.insert(pos, 1, letter); break;
      default: word[pos] = letter == word[pos] ? (letter == 'a' ? 'b' : 'a') : letter; break;
    }
    if (fuzzy_resolve(word, corpus.vocabulary()) == original) ++recovered;
  }
  MESSAGE("recovered " << recovered << " of " << trials);
  CHECK(recovered >= trials * 9 / 10);
}

TEST_CASE("corpus construction rules") {
  CHECK_THROWS_AS(Corpus({doc("a", "t", "body"), doc("a", "t", "other")}), ValidationError);
  CHECK_THROWS_AS(Corpus({doc("a", "t", "  ")}), ValidationError);
  const auto demo = Corpus::load(kDemoCorpus);
  CHECK(demo.documents().size() == 16);
  CHECK(demo.find("supplier-invoice") != nullptr);
  CHECK(demo.find("nope") == nullptr);
}

TEST_CASE("search ranking") {
  Corpus one({doc("only", "Bank feeds", "Connect a bank feed.")});
  auto single = search_arm_answer("bank", one, 3);
  CHECK(single.source_doc_ids == std::vector<std::string>{"only"});

  Corpus tied({doc("b", "", "wire transfer"), doc("a", "", "wire transfer"), doc("c", "", "cheque")});
  const auto hits = tied.search({"wire"}, 10);
  REQUIRE(hits.size() == 2);
  CHECK(tied.documents()[hits[0].doc_index].doc_id == "a");
  CHECK(tied.documents()[hits[1].doc_index].doc_id == "b");

  CHECK_THROWS_AS(search_arm_answer("bank", Corpus({}), 3), ArmUnavailable);
}

TEST_CASE("property: search order is score desc then doc_id asc") {
  const auto corpus = Corpus::load(kDemoCorpus);
  const auto& terms = corpus.vocabulary().terms();
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> q;
    for (int i = 0; i < 1 + static_cast<int>(gen() % 4); ++i) q.push_back(terms[gen() % terms.size()]);
    const auto hits = corpus.search(q, 100);
    const auto again = corpus.search(q, 100);
    REQUIRE(hits.size() == again.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
      CHECK(hits[i].doc_index == again[i].doc_index);
      CHECK(hits[i].score > 0.0);
      CHECK(hits[i].score == doctest::Approx(bm25_score(corpus.resolve(q), corpus.documents()[hits[i].doc_index],
                                                        corpus.stats())));
      if (i > 0) {
        const bool ordered = hits[i - 1].score > hits[i].score ||
                             (hits[i - 1].score == hits[i].score &&
                              corpus.documents()[hits[i - 1].doc_index].doc_id <
                                  corpus.documents()[hits[i].doc_index].doc_id);
        CHECK(ordered);
      }
    }
  }
}

TEST_CASE("the misspelling suplier finds the supplier document") {
  const auto corpus = Corpus::load(kDemoCorpus);
  const auto hits = corpus.search(tokenize("suplier"), 3);
  REQUIRE_FALSE(hits.empty());
  CHECK(corpus.documents()[hits[0].doc_index].doc_id == "supplier-invoice");
  const auto answer = search_arm_answer("How do I pay a suplier invoice?", corpus, 3);
  CHECK(answer.source_doc_ids.front() == "supplier-invoice");
  CHECK(answer.has_answer);
  CHECK_FALSE(answer.answer_text.empty());
}

TEST_CASE("faq matching") {
  FaqTable table({{"How do I receive payment by wire?", "Share your routing number.", {}},
                  {"How do I reset my password?", "Use Forgot password.", {}}});
  CHECK(table.entries()[0].key == std::set<std::string>{"receive", "payment", "wire"});

  const auto exact = faq_arm_answer(content_token_set("receive payment wire"), table);
  CHECK(exact.answer_text == "Share your routing number.");
  CHECK(exact.score == 1.0);

  const auto partial = faq_arm_answer({"receive", "payment"}, table);
  CHECK(partial.score == doctest::Approx(2.0 / 3.0));

  const auto coverage = faq_arm_answer({"receive", "payment"}, table, FaqMatch::key_coverage);
  CHECK(coverage.score == doctest::Approx(2.0 / 3.0));
  const auto covered = faq_arm_answer({"receive", "payment", "wire", "today"}, table, FaqMatch::key_coverage);
  CHECK(covered.score == 1.0);

  const auto none = faq_arm_answer({"payroll"}, table);
  CHECK_FALSE(none.has_answer);
  CHECK(none.score == 0.0);
  CHECK_FALSE(none.answer_text.empty());
}

TEST_CASE("remote arm adapter") {
  Stub stub;
  const auto ok = remote_arm_answer("hello", stub.url("/ok"), 2000);
  CHECK(ok.answer_text == "ok: hello");
  CHECK(ok.score == 0.75);

  CHECK_THROWS_AS(remote_arm_answer("x", stub.url("/no_text"), 2000), ArmUnavailable);
  CHECK_THROWS_AS(remote_arm_answer("x", stub.url("/bad_score"), 2000), ArmUnavailable);
  CHECK_THROWS_AS(remote_arm_answer("x", stub.url("/garbage"), 2000), ArmUnavailable);
  CHECK_THROWS_AS(remote_arm_answer("x", stub.url("/error"), 2000), ArmUnavailable);
  CHECK_THROWS_AS(remote_arm_answer("x", stub.url("/slow"), 150), ArmUnavailable);
  CHECK_THROWS_AS(remote_arm_answer("x", "http://127.0.0.1:1/answer", 500), ArmUnavailable);
  CHECK_THROWS_AS(remote_arm_answer("x", "not a url", 500), ArmUnavailable);

  RemoteProvider provider(stub.url("/ok"), 2000);
  CHECK(provider.answer("hi").answer_text == "ok: hi");
}

TEST_CASE("highlight spans") {
  const std::string text = "Open Expenses. Choose the supplier and pay. Done!";
  const auto one = highlight_span({"supplier"}, text);
  REQUIRE(one.size() == 1);
  CHECK(text.substr(one[0].begin, one[0].end - one[0].begin) == "Choose the supplier and pay.");

  CHECK(highlight_span({"payroll"}, text).empty());

  const std::string tie = "Wire is fast. Wire is cheap.";
  const auto first = highlight_span({"wire"}, tie);
  REQUIRE(first.size() == 1);
  CHECK(first[0] == Span{0, 13});

  // misspelled query tokens still match through the sentence vocabulary
  const auto fuzzy = highlight_span({"suplier"}, text);
  REQUIRE(fuzzy.size() == 1);
  CHECK(fuzzy[0] == one[0]);
}

TEST_CASE("property: highlight spans stay inside arbitrary UTF-8 text") {
  std::mt19937_64 gen(99);
  const std::vector<std::string> pieces = {"a", "wire", " ", ".", "?", "!", "\xc3\xa9", "\xe2\x82\xac",
                                           "\xf0\x9f\x98\x80", "supplier", "\n", "pay", "\x80", "Z"};
  for (int trial = 0; trial < 1000; ++trial) {
    std::string text;
    const int n = static_cast<int>(gen() % 40);
    for (int i = 0; i < n; ++i) text += pieces[gen() % pieces.size()];
    std::vector<std::string> query;
    for (int i = 0; i < 3; ++i) query.push_back(pieces[gen() % pieces.size()]);
    const auto spans = highlight_span(tokenize(query[0] + " " + query[1] + " " + query[2]), text);
    std::size_t last_end = 0;
    for (const auto& s : spans) {
      CHECK(s.begin < s.end);
      CHECK(s.end <= text.size());
      CHECK(s.begin >= last_end);
      last_end = s.end;
    }
  }
}
