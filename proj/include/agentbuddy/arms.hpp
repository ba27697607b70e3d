#pragma once

// Answer providers (the bandit's arms): lexical search over a document
// corpus, curated FAQ lookup, and an adapter for providers hosted elsewhere.

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "agentbuddy/core_model.hpp"

namespace agentbuddy {

struct Document {
  std::string doc_id;
  std::string title;
  std::string body;
  std::vector<std::string> tokens;  // title followed by body
};

struct ArmAnswer {
  std::string answer_text;
  std::vector<std::string> source_doc_ids;
  double score = 0.0;
  bool has_answer = true;
};

struct CorpusStats {
  std::size_t document_count = 0;
  std::unordered_map<std::string, std::size_t> document_frequency;
  double average_length = 0.0;
};

// Trigram-indexed term list used for misspelling recovery.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const std::set<std::string>& terms);

  bool contains(const std::string& term) const { return lookup_.contains(term); }
  std::size_t size() const { return terms_.size(); }
  const std::vector<std::string>& terms() const { return terms_; }

  struct Match {
    std::string term;
    double similarity = 0.0;
  };
  // Highest trigram-Jaccard term, ties broken lexicographically.
  std::optional<Match> closest(const std::string& token) const;
  // Best-Jaccard term exactly one edit away (insertion, deletion,
  // substitution or adjacent transposition), ties broken lexicographically.
  std::optional<Match> closest_one_edit(const std::string& token) const;

 private:
  std::vector<std::string> terms_;  // sorted
  std::unordered_map<std::string, std::size_t> lookup_;
  std::vector<std::size_t> gram_counts_;
  std::unordered_map<std::string, std::vector<std::size_t>> postings_;
  std::unordered_map<std::size_t, std::vector<std::size_t>> by_length_;
};

inline constexpr double kFuzzyThreshold = 0.4;
inline constexpr std::size_t kOneEditMinLength = 4;

double trigram_jaccard(std::string_view a, std::string_view b);

// Exact member, else the closest term one edit away (tokens of at least
// kOneEditMinLength bytes), else the best trigram-Jaccard term at or above
// `threshold`. Trigram overlap alone misses single typos in words shorter
// than about nine letters.
std::optional<std::string> fuzzy_resolve(const std::string& token, const Vocabulary& vocabulary,
                                         double threshold = kFuzzyThreshold);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// Distinct query terms are summed; absent terms contribute 0.
double bm25_score(const std::vector<std::string>& query_tokens, const Document& doc,
                  const CorpusStats& stats, const Bm25Params& params = {});

class Corpus {
 public:
  explicit Corpus(std::vector<Document> docs);

  // JSONL with {doc_id, title, body} per line, or a directory of text files
  // whose file stem is the doc id and whose first line is the title.
  static Corpus load(const std::filesystem::path& path);

  const std::vector<Document>& documents() const { return docs_; }
  const CorpusStats& stats() const { return stats_; }
  const Vocabulary& vocabulary() const { return vocabulary_; }
  const Document* find(const std::string& doc_id) const;

  struct Hit {
    std::size_t doc_index;
    double score;
  };
  // Query tokens are fuzzy-resolved, then every document is ranked by BM25
  // (score desc, doc_id asc). Only documents scoring above zero are returned.
  std::vector<Hit> search(const std::vector<std::string>& query_tokens, std::size_t limit,
                          double fuzzy_threshold = kFuzzyThreshold) const;

  std::vector<std::string> resolve(const std::vector<std::string>& query_tokens,
                                   double fuzzy_threshold = kFuzzyThreshold) const;

 private:
  std::vector<Document> docs_;
  CorpusStats stats_;
  Vocabulary vocabulary_;
  std::unordered_map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> postings_;
  std::unordered_map<std::string, std::size_t> by_id_;
  Bm25Params params_;
};

ArmAnswer search_arm_answer(const std::string& utterance, const Corpus& corpus,
                            std::size_t top_k = 3);

struct FaqEntry {
  std::string question;
  std::string answer;
  std::set<std::string> key;  // content tokens of the question
};

enum class FaqMatch {
  jaccard,       // |Q ∩ K| / |Q ∪ K|
  key_coverage,  // |Q ∩ K| / |K|
};

class FaqTable {
 public:
  explicit FaqTable(std::vector<FaqEntry> entries);
  // JSONL with {question, answer} per line.
  static FaqTable load(const std::filesystem::path& path);
  const std::vector<FaqEntry>& entries() const { return entries_; }

 private:
  std::vector<FaqEntry> entries_;
};

// Stopword-free token set used for FAQ keys and queries.
std::set<std::string> content_token_set(std::string_view text);

inline constexpr double kFaqMinScore = 0.2;

ArmAnswer faq_arm_answer(const std::set<std::string>& query_tokens, const FaqTable& table,
                         FaqMatch match = FaqMatch::jaccard, double min_score = kFaqMinScore);

// POSTs {"utterance"} and expects {"answer_text", "score"}. Throws
// ArmUnavailable on timeout, transport failure, non-2xx or schema violation.
ArmAnswer remote_arm_answer(const std::string& utterance, const std::string& endpoint,
                            int timeout_ms);

// Byte span of the sentence sharing the most distinct query tokens with the
// query (earliest on ties); empty when nothing overlaps.
std::vector<Span> highlight_span(const std::vector<std::string>& query_tokens,
                                 std::string_view answer_text);

class AnswerProvider {
 public:
  virtual ~AnswerProvider() = default;
  virtual ArmAnswer answer(const std::string& utterance) const = 0;
};

class SearchProvider final : public AnswerProvider {
 public:
  explicit SearchProvider(std::shared_ptr<const Corpus> corpus, std::size_t top_k = 3)
      : corpus_(std::move(corpus)), top_k_(top_k) {}
  ArmAnswer answer(const std::string& utterance) const override;

 private:
  std::shared_ptr<const Corpus> corpus_;
  std::size_t top_k_;
};

class FaqProvider final : public AnswerProvider {
 public:
  FaqProvider(std::shared_ptr<const FaqTable> table, FaqMatch match)
      : table_(std::move(table)), match_(match) {}
  ArmAnswer answer(const std::string& utterance) const override;

 private:
  std::shared_ptr<const FaqTable> table_;
  FaqMatch match_;
};

class RemoteProvider final : public AnswerProvider {
 public:
  RemoteProvider(std::string endpoint, int timeout_ms)
      : endpoint_(std::move(endpoint)), timeout_ms_(timeout_ms) {}
  ArmAnswer answer(const std::string& utterance) const override;
  const std::string& endpoint() const { return endpoint_; }

 private:
  std::string endpoint_;
  int timeout_ms_;
};

class ArmRegistry {
 public:
  // Ids are dense in registration order. Throws RegistrationError on a
  // duplicate name or a null provider.
  ArmId register_arm(const std::string& name, ArmKind kind,
                     std::shared_ptr<const AnswerProvider> provider);

  std::size_t size() const { return arms_.size(); }
  const std::vector<ArmDescriptor>& descriptors() const { return arms_; }
  const ArmDescriptor& descriptor(ArmId id) const;
  const AnswerProvider& provider(ArmId id) const;

 private:
  std::vector<ArmDescriptor> arms_;
  std::vector<std::shared_ptr<const AnswerProvider>> providers_;
};

}  // namespace agentbuddy
