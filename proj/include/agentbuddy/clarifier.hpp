#pragma once

// Clarifying questions as bag-of-words filters over a candidate answer set.
//
// A filter on term t splits the candidates into those containing t (k of
// them) and those that do not (n - k). Under the prior that every remaining
// candidate is equally likely to be the intended answer, asking about t leaves
// (k^2 + (n-k)^2) / n candidates in expectation. One greedy step picks the
// term minimizing that quantity.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "agentbuddy/core_model.hpp"

namespace agentbuddy {

struct Candidate {
  std::string doc_id;
  std::set<std::string> terms;
};

class CandidateSet {
 public:
  // Throws ValidationError when empty or when doc ids repeat.
  explicit CandidateSet(std::vector<Candidate> candidates);

  // Bag of words from raw text, stopwords removed.
  static Candidate make_candidate(std::string doc_id, std::string_view text);

  std::size_t size() const { return candidates_.size(); }
  const std::vector<Candidate>& candidates() const { return candidates_; }
  std::vector<std::string> doc_ids() const;
  std::size_t count_containing(const std::string& term) const;

  // Terms present in at least one and at most n - 1 candidates.
  std::set<std::string> splitting_vocabulary() const;

 private:
  std::vector<Candidate> candidates_;
};

struct Filter {
  std::string term;
  std::size_t yes_count = 0;
  std::size_t total = 0;
};

enum class ClarifyAnswer { yes, no };

Filter make_filter(const CandidateSet& candidates, const std::string& term);

struct AmbiguityThresholds {
  std::size_t min_near_ties = 4;
  double near_tie_fraction = 0.5;
  double margin_fraction = 0.1;
};

// `scores` must be sorted descending.
bool is_ambiguous(const std::vector<double>& scores, const AmbiguityThresholds& thresholds = {});

double expected_remaining(std::size_t n, std::size_t k);
double expected_remaining(const CandidateSet& candidates, const Filter& filter);

std::optional<Filter> best_filter(const CandidateSet& candidates);
// Greedy step restricted to `vocabulary`; terms that do not split are ignored.
std::optional<Filter> best_filter(const CandidateSet& candidates,
                                  const std::set<std::string>& vocabulary);

// Throws ContradictionError when no candidate survives.
CandidateSet apply_filter(const CandidateSet& candidates, const Filter& filter, ClarifyAnswer answer);

std::string render_question(const Filter& filter);

}  // namespace agentbuddy
