#include "agentbuddy/featurizer.hpp"

#include <bit>
#include <cmath>

namespace agentbuddy {

void validate(const FeaturizerConfig& config) {
  if (config.dimension == 0 || !std::has_single_bit(config.dimension)) {
    throw ValidationError("featurizer.dimension must be a power of two");
  }
  if (config.dimension > (std::size_t{1} << 32)) {
    throw ValidationError("featurizer.dimension too large");
  }
  if (config.ngram_max < 1) throw ValidationError("featurizer.ngram_max must be >= 1");
  if (!(config.history_decay >= 0.0 && config.history_decay < 1.0)) {
    throw ValidationError("featurizer.history_decay must lie in [0,1)");
  }
}

Session::Session(std::string session_id, std::size_t window)
    : session_id_(std::move(session_id)), window_(window) {}

void Session::push(std::string utterance) {
  if (window_ == 0) return;
  history_.push_back(std::move(utterance));
  while (history_.size() > window_) history_.pop_front();
}

std::vector<std::string> tokenize(std::string_view text, bool lowercase) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    const bool ascii_alnum = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
                             (c >= 'A' && c <= 'Z');
    if (ascii_alnum || c >= 0x80) {
      if (lowercase && c >= 'A' && c <= 'Z') {
        current.push_back(static_cast<char>(c - 'A' + 'a'));
      } else {
        current.push_back(raw);
      }
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::set<std::string> char_ngrams(std::string_view token, std::size_t n) {
  std::set<std::string> grams;
  if (token.empty()) return grams;
  if (token.size() < n) {
    grams.emplace(token);
    return grams;
  }
  for (std::size_t i = 0; i + n <= token.size(); ++i) grams.emplace(token.substr(i, n));
  return grams;
}

FeatureVector hash_features(const std::vector<std::string>& tokens,
                            const FeaturizerConfig& config) {
  validate(config);
  FeatureVector out(config.dimension);
  const auto mask = static_cast<std::uint64_t>(config.dimension - 1);
  auto emit = [&](std::string_view feature) {
    const std::uint64_t h = fnv1a64(feature);
    const double sign = (h >> 63) == 0 ? 1.0 : -1.0;
    out.add(static_cast<std::uint32_t>(h & mask), sign);
  };

  const auto n_max = static_cast<std::size_t>(config.ngram_max);
  std::string feature;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    feature = tokens[i];
    emit(feature);
    for (std::size_t n = 2; n <= n_max && i + n <= tokens.size(); ++n) {
      feature.push_back(' ');
      feature += tokens[i + n - 1];
      emit(feature);
    }
  }
  out.normalize();
  return out;
}

FeatureVector build_context(const Query& query, const Session& session,
                            const FeaturizerConfig& config) {
  FeatureVector context = hash_features(tokenize(query.utterance, config.lowercase), config);
  if (config.history_decay > 0.0) {
    double weight = 1.0;
    const auto& history = session.history();
    for (auto it = history.rbegin(); it != history.rend(); ++it) {
      weight *= config.history_decay;
      context.axpy(weight, hash_features(tokenize(*it, config.lowercase), config));
    }
  }
  context.normalize();
  return context;
}

}  // namespace agentbuddy
