// SPDX-License-Identifier: Apache-2.0
//
// Lexical retrieval: corpus ingestion, inverted index, Okapi BM25 top-k
// search, multi-query retrieval with rank-interleaved deduplication, TF-IDF
// screening, and the information-block renderer.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace multisearch {

struct Document {
  std::string id;
  std::string title;
  std::string body;

  friend bool operator==(const Document&, const Document&) = default;
};

struct Corpus {
  std::vector<Document> docs;
};

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
};

struct RetrieverConfig {
  std::size_t top_k = 3;
  double bm25_k1 = 1.2;
  double bm25_b = 0.75;
  char delimiter = '\n';  // query separator inside a search block
};

class CorpusError : public std::runtime_error {
 public:
  enum class Code { MalformedRecord, DuplicateId, EmptyCorpus };

  CorpusError(Code code, const std::string& message, std::size_t line = 0,
              std::string id = {})
      : std::runtime_error(message), code_(code), line_(line), id_(std::move(id)) {}

  Code code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& id() const noexcept { return id_; }

 private:
  Code code_;
  std::size_t line_;  // 1-based line number for malformed records
  std::string id_;    // offending id for duplicates
};

/// Lowercases and splits on non-alphanumeric runs (bytes outside ASCII
/// alphanumerics act as separators).
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

struct Posting {
  std::uint32_t doc = 0;  // index into docs
  std::uint32_t tf = 0;

  friend bool operator==(const Posting&, const Posting&) = default;
};

struct InvertedIndex {
  std::vector<Document> docs;
  std::unordered_map<std::string, std::vector<Posting>> postings;
  std::vector<std::uint32_t> doc_lengths;  // token count per doc index
  std::unordered_map<std::string, std::uint32_t> id_to_index;
  double avg_doc_length = 0.0;

  std::size_t total_docs() const { return docs.size(); }

  std::size_t doc_freq(std::string_view term) const {
    auto it = postings.find(std::string(term));
    return it == postings.end() ? 0 : it->second.size();
  }

  const Document* find(std::string_view id) const {
    auto it = id_to_index.find(std::string(id));
    return it == id_to_index.end() ? nullptr : &docs[it->second];
  }
};

/// Loads a line-delimited corpus; each line is a JSON object with fields
/// id, title, contents (title may be absent and defaults to empty).
inline Corpus ingest_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw CorpusError(CorpusError::Code::MalformedRecord,
                      "cannot open corpus file: " + path.string());
  }
  Corpus corpus;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record = nlohmann::json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object()) {
      throw CorpusError(CorpusError::Code::MalformedRecord,
                        "line " + std::to_string(line_no) + ": not a JSON object",
                        line_no);
    }
    if (!record.contains("id") || !record.contains("contents") ||
        !record["contents"].is_string()) {
      throw CorpusError(CorpusError::Code::MalformedRecord,
                        "line " + std::to_string(line_no) +
                            ": record needs string fields id and contents",
                        line_no);
    }
    Document doc;
    doc.id = record["id"].is_string() ? record["id"].get<std::string>()
                                      : record["id"].dump();
    doc.title = record.value("title", "");
    doc.body = record["contents"].get<std::string>();
    if (!seen.insert(doc.id).second) {
      throw CorpusError(CorpusError::Code::DuplicateId,
                        "duplicate document id \"" + doc.id + "\"", line_no, doc.id);
    }
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

/// Builds the index over title + body tokens. Pure function of the corpus.
inline InvertedIndex build_index(Corpus corpus) {
  if (corpus.docs.empty()) {
    throw CorpusError(CorpusError::Code::EmptyCorpus, "cannot index an empty corpus");
  }
  InvertedIndex index;
  index.docs = std::move(corpus.docs);
  index.doc_lengths.resize(index.docs.size());
  std::uint64_t total_tokens = 0;
  for (std::uint32_t d = 0; d < index.docs.size(); ++d) {
    const Document& doc = index.docs[d];
    index.id_to_index.emplace(doc.id, d);
    std::vector<std::string> tokens = tokenize(doc.title);
    std::vector<std::string> body_tokens = tokenize(doc.body);
    tokens.insert(tokens.end(), body_tokens.begin(), body_tokens.end());
    index.doc_lengths[d] = static_cast<std::uint32_t>(tokens.size());
    total_tokens += tokens.size();
    std::unordered_map<std::string, std::uint32_t> counts;
    for (std::string& token : tokens) ++counts[std::move(token)];
    for (auto& [term, tf] : counts) index.postings[term].push_back(Posting{d, tf});
  }
  for (auto& [term, list] : index.postings) {
    std::sort(list.begin(), list.end(),
              [](const Posting& a, const Posting& b) { return a.doc < b.doc; });
  }
  index.avg_doc_length =
      static_cast<double>(total_tokens) / static_cast<double>(index.docs.size());
  return index;
}

namespace detail {

// Non-negative IDF variant, so every matching document scores > 0.
inline double bm25_idf(std::size_t total_docs, std::size_t df) {
  return std::log(1.0 + (static_cast<double>(total_docs) - static_cast<double>(df) + 0.5) /
                            (static_cast<double>(df) + 0.5));
}

inline void sort_scored(std::vector<ScoredDoc>& results) {
  std::sort(results.begin(), results.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
}

}  // namespace detail

/// Okapi BM25 top-k. Returns at most k documents with positive score, sorted
/// by score descending with ties broken by doc id ascending.
inline std::vector<ScoredDoc> bm25_search(const InvertedIndex& index,
                                          std::string_view query, std::size_t k,
                                          double k1 = 1.2, double b = 0.75) {
  if (k == 0) return {};
  const std::vector<std::string> terms = tokenize(query);
  std::unordered_map<std::uint32_t, double> scores;
  for (const std::string& term : terms) {
    auto it = index.postings.find(term);
    if (it == index.postings.end()) continue;
    const double idf = detail::bm25_idf(index.total_docs(), it->second.size());
    for (const Posting& posting : it->second) {
      const double tf = static_cast<double>(posting.tf);
      const double norm =
          k1 * (1.0 - b + b * index.doc_lengths[posting.doc] / index.avg_doc_length);
      scores[posting.doc] += idf * (tf * (k1 + 1.0)) / (tf + norm);
    }
  }
  std::vector<ScoredDoc> results;
  results.reserve(scores.size());
  for (const auto& [doc, score] : scores) {
    results.push_back(ScoredDoc{index.docs[doc].id, score});
  }
  detail::sort_scored(results);
  if (results.size() > k) results.resize(k);
  return results;
}

/// Runs every query at cfg.top_k and merges by rank position (all rank-1
/// results, then rank-2, ...), dropping ids already taken. Output size is
/// bounded by |queries| * top_k and contains no duplicate ids.
inline std::vector<Document> multi_query_search(const InvertedIndex& index,
                                                const std::vector<std::string>& queries,
                                                const RetrieverConfig& cfg) {
  std::vector<std::vector<ScoredDoc>> per_query;
  per_query.reserve(queries.size());
  for (const std::string& query : queries) {
    per_query.push_back(bm25_search(index, query, cfg.top_k, cfg.bm25_k1, cfg.bm25_b));
  }
  std::vector<Document> merged;
  std::unordered_set<std::string> taken;
  for (std::size_t rank = 0; rank < cfg.top_k; ++rank) {
    for (const auto& results : per_query) {
      if (rank >= results.size()) continue;
      const std::string& id = results[rank].doc_id;
      if (!taken.insert(id).second) continue;
      merged.push_back(*index.find(id));
    }
  }
  return merged;
}

/// Keeps the m documents most similar to the question under TF-IDF-weighted
/// cosine similarity, with IDF computed over the given documents only.
inline std::vector<Document> tfidf_screen(std::string_view question,
                                          const std::vector<Document>& docs,
                                          std::size_t m) {
  if (docs.empty()) return {};
  const std::size_t n = docs.size();

  std::vector<std::unordered_map<std::string, double>> doc_tf(n);
  std::unordered_map<std::string, std::size_t> df;
  for (std::size_t d = 0; d < n; ++d) {
    std::vector<std::string> tokens = tokenize(docs[d].title);
    std::vector<std::string> body_tokens = tokenize(docs[d].body);
    tokens.insert(tokens.end(), body_tokens.begin(), body_tokens.end());
    for (const std::string& token : tokens) doc_tf[d][token] += 1.0;
    for (const auto& [term, tf] : doc_tf[d]) ++df[term];
  }
  auto idf = [&](const std::string& term) {
    auto it = df.find(term);
    const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + static_cast<double>(n)) / (1.0 + d)) + 1.0;
  };

  std::unordered_map<std::string, double> question_vec;
  for (const std::string& token : tokenize(question)) question_vec[token] += 1.0;
  double question_norm = 0.0;
  for (auto& [term, tf] : question_vec) {
    tf *= idf(term);
    question_norm += tf * tf;
  }
  question_norm = std::sqrt(question_norm);

  std::vector<std::pair<double, std::size_t>> ranked;  // (similarity, doc position)
  for (std::size_t d = 0; d < n; ++d) {
    double dot = 0.0;
    double norm = 0.0;
    for (auto& [term, tf] : doc_tf[d]) {
      const double w = tf * idf(term);
      norm += w * w;
      auto it = question_vec.find(term);
      if (it != question_vec.end()) dot += w * it->second;
    }
    norm = std::sqrt(norm);
    const double sim =
        (norm > 0.0 && question_norm > 0.0) ? dot / (norm * question_norm) : 0.0;
    ranked.emplace_back(sim, d);
  }
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return docs[a.second].id < docs[b.second].id;
  });

  std::vector<Document> out;
  for (std::size_t i = 0; i < std::min(m, n); ++i) out.push_back(docs[ranked[i].second]);
  return out;
}

/// Renders retrieved documents as the inner text of an information block:
/// "Doc i(Title: <title>) <body>", one document per line.
inline std::string render_information(const std::vector<Document>& docs) {
  std::string out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (i > 0) out += '\n';
    out += "Doc " + std::to_string(i + 1) + "(Title: " + docs[i].title + ") " +
           docs[i].body;
  }
  return out;
}

/// Snapshot format: the validated corpus as line-delimited JSON; the index
/// is rebuilt deterministically on load.
inline void save_index(const InvertedIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write index snapshot: " + path.string());
  for (const Document& doc : index.docs) {
    nlohmann::ordered_json record = {
        {"id", doc.id}, {"title", doc.title}, {"contents", doc.body}};
    out << record.dump() << '\n';
  }
}

inline InvertedIndex load_index(const std::filesystem::path& path) {
  return build_index(ingest_corpus(path));
}

}  // namespace multisearch
