#include "agentbuddy/clarifier.hpp"

#include <map>
#include <unordered_set>

#include "agentbuddy/featurizer.hpp"
#include "agentbuddy/stopwords.hpp"

namespace agentbuddy {

CandidateSet::CandidateSet(std::vector<Candidate> candidates) : candidates_(std::move(candidates)) {
  if (candidates_.empty()) throw ValidationError("candidate set is empty");
  std::unordered_set<std::string> seen;
  for (const auto& c : candidates_) {
    if (!seen.insert(c.doc_id).second) throw ValidationError("duplicate candidate " + c.doc_id);
  }
}

Candidate CandidateSet::make_candidate(std::string doc_id, std::string_view text) {
  Candidate c{std::move(doc_id), {}};
  for (auto& t : tokenize(text)) {
    if (!is_stopword(t)) c.terms.insert(std::move(t));
  }
  return c;
}

std::vector<std::string> CandidateSet::doc_ids() const {
  std::vector<std::string> out;
  out.reserve(candidates_.size());
  for (const auto& c : candidates_) out.push_back(c.doc_id);
  return out;
}

std::size_t CandidateSet::count_containing(const std::string& term) const {
  std::size_t k = 0;
  for (const auto& c : candidates_) k += c.terms.count(term);
  return k;
}

std::set<std::string> CandidateSet::splitting_vocabulary() const {
  std::map<std::string, std::size_t> df;
  for (const auto& c : candidates_) {
    for (const auto& t : c.terms) ++df[t];
  }
  std::set<std::string> vocab;
  for (const auto& [term, k] : df) {
    if (k < candidates_.size() && !is_stopword(term)) vocab.insert(term);
  }
  return vocab;
}

Filter make_filter(const CandidateSet& candidates, const std::string& term) {
  return {term, candidates.count_containing(term), candidates.size()};
}

bool is_ambiguous(const std::vector<double>& scores, const AmbiguityThresholds& thresholds) {
  if (scores.size() < 2) return false;
  const double top = scores[0];
  std::size_t near = 0;
  for (double s : scores) {
    if (s >= thresholds.near_tie_fraction * top) ++near;
  }
  return near >= thresholds.min_near_ties && (top - scores[1]) < thresholds.margin_fraction * top;
}

double expected_remaining(std::size_t n, std::size_t k) {
  if (n == 0) throw ValidationError("expected_remaining on an empty candidate set");
  if (k > n) throw ValidationError("filter yes-count exceeds candidate count");
  if (k == 0 || k == n) return static_cast<double>(n);
  const double kd = static_cast<double>(k);
  const double rest = static_cast<double>(n - k);
  return (kd * kd + rest * rest) / static_cast<double>(n);
}

double expected_remaining(const CandidateSet& candidates, const Filter& filter) {
  if (filter.total != candidates.size()) throw ValidationError("filter built for a different candidate set");
  return expected_remaining(filter.total, filter.yes_count);
}

std::optional<Filter> best_filter(const CandidateSet& candidates,
                                  const std::set<std::string>& vocabulary) {
  std::optional<Filter> best;
  double best_er = 0.0;
  // Ordered iteration with a strict comparison keeps the lexicographically
  // smallest term among equal objectives.
  for (const auto& term : vocabulary) {
    const auto filter = make_filter(candidates, term);
    if (filter.yes_count == 0 || filter.yes_count == filter.total) continue;
    const double er = expected_remaining(filter.total, filter.yes_count);
    if (!best || er < best_er) {
      best = filter;
      best_er = er;
    }
  }
  return best;
}

std::optional<Filter> best_filter(const CandidateSet& candidates) {
  return best_filter(candidates, candidates.splitting_vocabulary());
}

CandidateSet apply_filter(const CandidateSet& candidates, const Filter& filter, ClarifyAnswer answer) {
  std::vector<Candidate> kept;
  for (const auto& c : candidates.candidates()) {
    const bool contains = c.terms.contains(filter.term);
    if (contains == (answer == ClarifyAnswer::yes)) kept.push_back(c);
  }
  if (kept.empty()) {
    throw ContradictionError("no candidate answer is consistent with '" + filter.term + "' = " +
                             (answer == ClarifyAnswer::yes ? "yes" : "no"));
  }
  return CandidateSet(std::move(kept));
}

std::string render_question(const Filter& filter) {
  return "Does your request involve '" + filter.term + "'?";
}

}  // namespace agentbuddy
