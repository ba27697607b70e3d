#include "agentbuddy/arms.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "agentbuddy/featurizer.hpp"
#include "agentbuddy/stopwords.hpp"

namespace agentbuddy {

using nlohmann::json;

namespace {

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::set<std::string> distinct(const std::vector<std::string>& tokens) {
  return {tokens.begin(), tokens.end()};
}

double idf(std::size_t n, std::size_t df) {
  const double nd = static_cast<double>(n);
  const double dd = static_cast<double>(df);
  return std::log(1.0 + (nd - dd + 0.5) / (dd + 0.5));
}

double tf_weight(double tf, double length, double average_length, const Bm25Params& p) {
  const double norm = average_length > 0.0 ? length / average_length : 1.0;
  return tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

// One insertion, deletion, substitution or adjacent transposition.
bool one_edit_apart(std::string_view a, std::string_view b) {
  if (a.size() > b.size()) std::swap(a, b);
  if (b.size() - a.size() > 1) return false;
  std::size_t i = 0;
  while (i < a.size() && a[i] == b[i]) ++i;
  if (a.size() == b.size()) {
    if (i == a.size()) return false;
    if (a.substr(i + 1) == b.substr(i + 1)) return true;
    return i + 1 < a.size() && a[i] == b[i + 1] && a[i + 1] == b[i] && a.substr(i + 2) == b.substr(i + 2);
  }
  return a.substr(i) == b.substr(i + 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(const std::set<std::string>& terms) : terms_(terms.begin(), terms.end()) {
  gram_counts_.reserve(terms_.size());
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    lookup_.emplace(terms_[i], i);
    by_length_[terms_[i].size()].push_back(i);
    const auto grams = char_ngrams(terms_[i]);
    gram_counts_.push_back(grams.size());
    for (const auto& g : grams) postings_[g].push_back(i);
  }
}

std::optional<Vocabulary::Match> Vocabulary::closest(const std::string& token) const {
  if (token.empty()) return std::nullopt;
  const auto grams = char_ngrams(token);
  std::unordered_map<std::size_t, std::size_t> shared;
  for (const auto& g : grams) {
    auto it = postings_.find(g);
    if (it == postings_.end()) continue;
    for (std::size_t term : it->second) ++shared[term];
  }
  std::optional<Match> best;
  std::size_t best_index = 0;
  for (const auto& [term, inter] : shared) {
    const double sim = static_cast<double>(inter) /
                       static_cast<double>(grams.size() + gram_counts_[term] - inter);
    if (!best || sim > best->similarity || (sim == best->similarity && term < best_index)) {
      best = Match{terms_[term], sim};
      best_index = term;
    }
  }
  return best;
}

std::optional<Vocabulary::Match> Vocabulary::closest_one_edit(const std::string& token) const {
  std::optional<Match> best;
  for (std::size_t len = token.size() == 0 ? 0 : token.size() - 1; len <= token.size() + 1; ++len) {
    auto it = by_length_.find(len);
    if (it == by_length_.end()) continue;
    for (std::size_t term : it->second) {
      if (!one_edit_apart(token, terms_[term])) continue;
      const double sim = trigram_jaccard(token, terms_[term]);
      if (!best || sim > best->similarity || (sim == best->similarity && terms_[term] < best->term)) {
        best = Match{terms_[term], sim};
      }
    }
  }
  return best;
}

double trigram_jaccard(std::string_view a, std::string_view b) {
  const auto ga = char_ngrams(a);
  const auto gb = char_ngrams(b);
  if (ga.empty() && gb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& g : ga) inter += gb.count(g);
  return static_cast<double>(inter) / static_cast<double>(ga.size() + gb.size() - inter);
}

std::optional<std::string> fuzzy_resolve(const std::string& token, const Vocabulary& vocabulary,
                                         double threshold) {
  if (vocabulary.contains(token)) return token;
  if (token.size() >= kOneEditMinLength) {
    if (auto near = vocabulary.closest_one_edit(token)) return near->term;
  }
  auto match = vocabulary.closest(token);
  if (match && match->similarity >= threshold) return match->term;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// BM25 and the corpus index

double bm25_score(const std::vector<std::string>& query_tokens, const Document& doc,
                  const CorpusStats& stats, const Bm25Params& params) {
  if (query_tokens.empty() || doc.tokens.empty()) return 0.0;
  const double length = static_cast<double>(doc.tokens.size());
  double score = 0.0;
  for (const auto& term : distinct(query_tokens)) {
    const auto tf = std::count(doc.tokens.begin(), doc.tokens.end(), term);
    if (tf == 0) continue;
    auto df_it = stats.document_frequency.find(term);
    const std::size_t df = df_it == stats.document_frequency.end() ? 0 : df_it->second;
    score += idf(stats.document_count, df) *
             tf_weight(static_cast<double>(tf), length, stats.average_length, params);
  }
  return score;
}

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
  std::set<std::string> terms;
  std::size_t total_length = 0;
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    auto& doc = docs_[i];
    if (doc.doc_id.empty()) throw ValidationError("document without doc_id");
    if (trim(doc.body).empty()) throw ValidationError("document " + doc.doc_id + " has empty body");
    if (!by_id_.emplace(doc.doc_id, i).second) {
      throw ValidationError("duplicate doc_id " + doc.doc_id);
    }
    if (doc.tokens.empty()) doc.tokens = tokenize(doc.title + " " + doc.body);
    total_length += doc.tokens.size();
    std::unordered_map<std::string, std::size_t> tf;
    for (const auto& t : doc.tokens) ++tf[t];
    for (const auto& [term, count] : tf) {
      ++stats_.document_frequency[term];
      postings_[term].emplace_back(i, count);
      terms.insert(term);
    }
  }
  stats_.document_count = docs_.size();
  stats_.average_length =
      docs_.empty() ? 0.0 : static_cast<double>(total_length) / static_cast<double>(docs_.size());
  vocabulary_ = Vocabulary(terms);
}

Corpus Corpus::load(const std::filesystem::path& path) {
  std::vector<Document> docs;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      auto lines = read_lines(file);
      Document doc;
      doc.doc_id = file.stem().string();
      if (!lines.empty()) doc.title = trim(lines.front());
      std::ostringstream body;
      for (std::size_t i = 1; i < lines.size(); ++i) body << lines[i] << '\n';
      doc.body = trim(body.str());
      docs.push_back(std::move(doc));
    }
  } else {
    const auto lines = read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (trim(lines[i]).empty()) continue;
      try {
        const auto j = json::parse(lines[i]);
        Document doc;
        doc.doc_id = j.at("doc_id").get<std::string>();
        doc.title = j.value("title", std::string{});
        doc.body = j.at("body").get<std::string>();
        docs.push_back(std::move(doc));
      } catch (const json::exception& e) {
        throw ValidationError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
      }
    }
  }
  return Corpus(std::move(docs));
}

const Document* Corpus::find(const std::string& doc_id) const {
  auto it = by_id_.find(doc_id);
  return it == by_id_.end() ? nullptr : &docs_[it->second];
}

std::vector<std::string> Corpus::resolve(const std::vector<std::string>& query_tokens,
                                         double fuzzy_threshold) const {
  std::vector<std::string> resolved;
  resolved.reserve(query_tokens.size());
  for (const auto& token : query_tokens) {
    if (auto term = fuzzy_resolve(token, vocabulary_, fuzzy_threshold)) {
      resolved.push_back(std::move(*term));
    }
  }
  return resolved;
}

std::vector<Corpus::Hit> Corpus::search(const std::vector<std::string>& query_tokens,
                                        std::size_t limit, double fuzzy_threshold) const {
  // Same accumulation order as bm25_score so both paths agree bit for bit.
  std::vector<double> scores(docs_.size(), 0.0);
  std::vector<bool> touched(docs_.size(), false);
  for (const auto& term : distinct(resolve(query_tokens, fuzzy_threshold))) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double term_idf = idf(stats_.document_count, it->second.size());
    for (const auto& [doc, tf] : it->second) {
      scores[doc] += term_idf * tf_weight(static_cast<double>(tf),
                                          static_cast<double>(docs_[doc].tokens.size()),
                                          stats_.average_length, params_);
      touched[doc] = true;
    }
  }
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (touched[i] && scores[i] > 0.0) hits.push_back({i, scores[i]});
  }
  auto order = [this](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return docs_[a.doc_index].doc_id < docs_[b.doc_index].doc_id;
  };
  if (hits.size() > limit) {
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(limit), hits.end(),
                      order);
    hits.resize(limit);
  } else {
    std::sort(hits.begin(), hits.end(), order);
  }
  return hits;
}

// ---------------------------------------------------------------------------
// Highlighting

namespace {

struct Sentence {
  std::size_t begin;
  std::size_t end;
};

std::vector<Sentence> split_sentences(std::string_view text) {
  std::vector<Sentence> out;
  std::size_t start = 0;
  auto flush = [&](std::size_t stop) {
    std::size_t b = start;
    std::size_t e = stop;
    while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) out.push_back({b, e});
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '.' || text[i] == '?' || text[i] == '!') {
      flush(i + 1);
      start = i + 1;
    }
  }
  flush(text.size());
  return out;
}

}  // namespace

std::vector<Span> highlight_span(const std::vector<std::string>& query_tokens,
                                 std::string_view answer_text) {
  const auto query = distinct(query_tokens);
  std::size_t best_score = 0;
  std::optional<Sentence> best;
  for (const auto& sentence : split_sentences(answer_text)) {
    const auto words = tokenize(answer_text.substr(sentence.begin, sentence.end - sentence.begin));
    const Vocabulary local(distinct(words));
    std::size_t score = 0;
    for (const auto& q : query) {
      if (fuzzy_resolve(q, local)) ++score;
    }
    if (score > best_score) {
      best_score = score;
      best = sentence;
    }
  }
  if (!best) return {};
  return {Span{best->begin, best->end}};
}

// ---------------------------------------------------------------------------
// Search arm

ArmAnswer search_arm_answer(const std::string& utterance, const Corpus& corpus,
                            std::size_t top_k) {
  const auto& docs = corpus.documents();
  if (docs.empty()) throw ArmUnavailable("search arm: empty corpus");
  if (top_k == 0) top_k = 1;
  const auto query = tokenize(utterance);
  auto hits = corpus.search(query, top_k);

  // Pad with unmatched documents in doc_id order so the arm always answers.
  if (hits.size() < top_k) {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const bool taken = std::any_of(hits.begin(), hits.end(),
                                     [i](const Corpus::Hit& h) { return h.doc_index == i; });
      if (!taken) rest.push_back(i);
    }
    std::sort(rest.begin(), rest.end(),
              [&](std::size_t a, std::size_t b) { return docs[a].doc_id < docs[b].doc_id; });
    for (std::size_t i : rest) {
      if (hits.size() >= top_k) break;
      hits.push_back({i, 0.0});
    }
  }

  ArmAnswer answer;
  std::ostringstream text;
  for (std::size_t rank = 0; rank < hits.size(); ++rank) {
    const auto& doc = docs[hits[rank].doc_index];
    answer.source_doc_ids.push_back(doc.doc_id);
    text << (rank + 1) << ") " << (doc.title.empty() ? doc.doc_id : doc.title) << '\n';
  }
  const auto& top = docs[hits.front().doc_index];
  const auto spans = highlight_span(corpus.resolve(query), top.body);
  std::string snippet;
  if (!spans.empty()) {
    snippet = top.body.substr(spans.front().begin, spans.front().end - spans.front().begin);
  } else {
    const auto first = split_sentences(top.body);
    snippet = first.empty() ? top.body : top.body.substr(first[0].begin, first[0].end - first[0].begin);
  }
  text << '\n' << snippet;
  answer.answer_text = text.str();
  answer.score = hits.front().score;
  return answer;
}

// ---------------------------------------------------------------------------
// FAQ arms

std::set<std::string> content_token_set(std::string_view text) {
  std::set<std::string> out;
  for (auto& t : tokenize(text)) {
    if (!is_stopword(t)) out.insert(std::move(t));
  }
  return out;
}

FaqTable::FaqTable(std::vector<FaqEntry> entries) : entries_(std::move(entries)) {
  for (auto& e : entries_) {
    if (e.key.empty()) e.key = content_token_set(e.question);
  }
}

FaqTable FaqTable::load(const std::filesystem::path& path) {
  std::vector<FaqEntry> entries;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      const auto j = json::parse(lines[i]);
      FaqEntry e;
      e.question = j.at("question").get<std::string>();
      e.answer = j.at("answer").get<std::string>();
      entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return FaqTable(std::move(entries));
}

ArmAnswer faq_arm_answer(const std::set<std::string>& query_tokens, const FaqTable& table,
                         FaqMatch match, double min_score) {
  double best_score = 0.0;
  const FaqEntry* best = nullptr;
  for (const auto& entry : table.entries()) {
    std::size_t inter = 0;
    for (const auto& t : query_tokens) inter += entry.key.count(t);
    if (inter == 0) continue;
    const double denom = match == FaqMatch::jaccard
                             ? static_cast<double>(query_tokens.size() + entry.key.size() - inter)
                             : static_cast<double>(entry.key.size());
    const double score = static_cast<double>(inter) / denom;
    if (score > best_score) {
      best_score = score;
      best = &entry;
    }
  }
  ArmAnswer answer;
  if (best == nullptr || best_score < min_score) {
    answer.has_answer = false;
    answer.score = 0.0;
    answer.answer_text = "No curated answer matches this question.";
    return answer;
  }
  answer.answer_text = best->answer;
  answer.score = best_score;
  answer.source_doc_ids.push_back(best->question);
  return answer;
}

// ---------------------------------------------------------------------------
// Remote arm

ArmAnswer remote_arm_answer(const std::string& utterance, const std::string& endpoint,
                            int timeout_ms) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) throw ArmUnavailable("bad endpoint " + endpoint);
  const auto path_start = endpoint.find('/', scheme_end + 3);
  const std::string origin = endpoint.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : endpoint.substr(path_start);

  httplib::Client client(origin);
  if (!client.is_valid()) throw ArmUnavailable("bad endpoint " + endpoint);
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);

  const auto res = client.Post(path, json{{"utterance", utterance}}.dump(), "application/json");
  if (!res) throw ArmUnavailable("remote arm " + endpoint + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw ArmUnavailable("remote arm " + endpoint + ": HTTP " + std::to_string(res->status));
  }
  const auto body = json::parse(res->body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw ArmUnavailable("remote arm: malformed JSON");
  const auto text = body.find("answer_text");
  const auto score = body.find("score");
  if (text == body.end() || !text->is_string() || text->get<std::string>().empty()) {
    throw ArmUnavailable("remote arm: missing answer_text");
  }
  if (score == body.end() || !score->is_number() || !std::isfinite(score->get<double>())) {
    throw ArmUnavailable("remote arm: missing score");
  }
  return ArmAnswer{text->get<std::string>(), {}, score->get<double>(), true};
}

// ---------------------------------------------------------------------------
// Providers and registry

ArmAnswer SearchProvider::answer(const std::string& utterance) const {
  return search_arm_answer(utterance, *corpus_, top_k_);
}

ArmAnswer FaqProvider::answer(const std::string& utterance) const {
  return faq_arm_answer(content_token_set(utterance), *table_, match_);
}

ArmAnswer RemoteProvider::answer(const std::string& utterance) const {
  return remote_arm_answer(utterance, endpoint_, timeout_ms_);
}

ArmId ArmRegistry::register_arm(const std::string& name, ArmKind kind,
                                std::shared_ptr<const AnswerProvider> provider) {
  if (name.empty()) throw RegistrationError("arm name is empty");
  if (!provider) throw RegistrationError("arm " + name + " has no provider");
  for (const auto& arm : arms_) {
    if (arm.name == name) throw RegistrationError("duplicate arm name " + name);
  }
  const auto id = static_cast<ArmId>(arms_.size());
  arms_.push_back({id, name, kind});
  providers_.push_back(std::move(provider));
  return id;
}

const ArmDescriptor& ArmRegistry::descriptor(ArmId id) const {
  if (id >= arms_.size()) throw ValidationError("unknown arm " + std::to_string(id));
  return arms_[id];
}

const AnswerProvider& ArmRegistry::provider(ArmId id) const {
  if (id >= providers_.size()) throw ValidationError("unknown arm " + std::to_string(id));
  return *providers_[id];
}

}  // namespace agentbuddy
