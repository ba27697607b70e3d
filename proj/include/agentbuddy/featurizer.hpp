#pragma once

#include <deque>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "agentbuddy/core_model.hpp"

namespace agentbuddy {

struct FeaturizerConfig {
  std::size_t dimension = std::size_t{1} << 18;
  int ngram_max = 2;
  double history_decay = 0.5;
  bool lowercase = true;
  std::size_t history_window = 6;
};

void validate(const FeaturizerConfig& config);

// Bounded window of prior utterances, oldest first.
class Session {
 public:
  explicit Session(std::string session_id = {}, std::size_t window = 6);

  const std::string& session_id() const { return session_id_; }
  const std::deque<std::string>& history() const { return history_; }
  std::size_t window() const { return window_; }
  void push(std::string utterance);

 private:
  std::string session_id_;
  std::size_t window_;
  std::deque<std::string> history_;
};

// Splits on every ASCII non-alphanumeric byte. Bytes >= 0x80 are kept inside
// tokens so multi-byte UTF-8 letters are never torn apart.
std::vector<std::string> tokenize(std::string_view text, bool lowercase = true);

std::set<std::string> char_ngrams(std::string_view token, std::size_t n = 3);

FeatureVector hash_features(const std::vector<std::string>& tokens,
                            const FeaturizerConfig& config);

// Query vector plus geometrically decayed history vectors, most recent
// utterance weighted by decay^1, then unit-normalized.
FeatureVector build_context(const Query& query, const Session& session,
                            const FeaturizerConfig& config);

}  // namespace agentbuddy
