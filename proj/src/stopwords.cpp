#include "agentbuddy/stopwords.hpp"

#include <algorithm>
#include <array>

namespace agentbuddy {

namespace {

// Sorted for binary search.
constexpr std::array<std::string_view, 50> kStopwords = {
    "a",    "about", "after", "all",   "an",   "and",  "any",   "are",  "as",
    "at",   "be",    "but",   "by",    "can",  "do",   "does",  "for",  "from",
    "has",  "have",  "how",   "i",     "if",   "in",   "into",  "is",   "it",
    "its",  "me",    "my",    "no",    "not",  "of",   "on",    "or",   "our",
    "so",   "that",  "the",   "their", "then", "this", "to",    "was",  "we",
    "what", "when",  "with",  "you",   "your"};

static_assert(std::is_sorted(kStopwords.begin(), kStopwords.end()));

}  // namespace

bool is_stopword(std::string_view token) {
  return std::binary_search(kStopwords.begin(), kStopwords.end(), token);
}

}  // namespace agentbuddy
