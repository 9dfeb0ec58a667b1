// SPDX-License-Identifier: Apache-2.0
//
// Dense retrieval is exposed only as an external-embedding-service contract:
// no embedding model ships here. DenseIndex caches one vector per document
// and ranks by cosine similarity against the embedded query.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "multisearch/http.hpp"
#include "multisearch/retrieval.hpp"

namespace multisearch {

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::vector<double> embed(const std::string& text) = 0;
};

/// Client for an embeddings endpoint speaking the common
/// {"model": ..., "input": ...} -> {"data": [{"embedding": [...]}]} schema.
class HttpEmbeddingBackend final : public EmbeddingBackend {
 public:
  HttpEmbeddingBackend(HttpEndpointConfig endpoint, std::string model,
                       std::string path = "/v1/embeddings")
      : endpoint_(std::move(endpoint)), model_(std::move(model)), path_(std::move(path)) {}

  std::vector<double> embed(const std::string& text) override {
    nlohmann::json body = {{"model", model_}, {"input", text}};
    const nlohmann::json response = post_json(endpoint_, path_, body);
    try {
      return response.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& ex) {
      throw EndpointError(200, "unexpected embedding response: " + std::string(ex.what()));
    }
  }

 private:
  HttpEndpointConfig endpoint_;
  std::string model_;
  std::string path_;
};

struct DenseIndex {
  std::vector<Document> docs;
  std::vector<std::vector<double>> vectors;
};

inline DenseIndex build_dense_index(const Corpus& corpus, EmbeddingBackend& backend) {
  DenseIndex index;
  index.docs = corpus.docs;
  index.vectors.reserve(corpus.docs.size());
  for (const Document& doc : corpus.docs) {
    index.vectors.push_back(backend.embed(doc.title + "\n" + doc.body));
  }
  return index;
}

inline std::vector<ScoredDoc> dense_search(const DenseIndex& index,
                                           EmbeddingBackend& backend,
                                           const std::string& query, std::size_t k) {
  const std::vector<double> q = backend.embed(query);
  double q_norm = 0.0;
  for (double v : q) q_norm += v * v;
  q_norm = std::sqrt(q_norm);

  std::vector<ScoredDoc> results;
  results.reserve(index.docs.size());
  for (std::size_t d = 0; d < index.docs.size(); ++d) {
    const auto& vec = index.vectors[d];
    double dot = 0.0;
    double norm = 0.0;
    const std::size_t dim = std::min(vec.size(), q.size());
    for (std::size_t i = 0; i < dim; ++i) dot += vec[i] * q[i];
    for (double v : vec) norm += v * v;
    norm = std::sqrt(norm);
    const double sim = (norm > 0.0 && q_norm > 0.0) ? dot / (norm * q_norm) : 0.0;
    results.push_back(ScoredDoc{index.docs[d].id, sim});
  }
  detail::sort_scored(results);
  if (results.size() > k) results.resize(k);
  return results;
}

}  // namespace multisearch
