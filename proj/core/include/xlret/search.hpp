// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xlret/synth.hpp"
#include "xlret/tensor.hpp"
#include "xlret/tokenizer.hpp"

namespace xlret {

// Maps a text (with its retrieval role) to a fixed-width embedding.
// Language and model are baked into the closure by the caller.
using Embedder = std::function<Tensor<float>(const std::string& text,
                                             InputKind kind)>;

enum class Similarity { kCosine, kDot };

// Brute-force exact index: one embedding row per document.
struct EmbeddingIndex {
  std::vector<std::string> doc_ids;
  std::vector<float> data;  // row-major [N x dim]
  std::size_t dim = 0;
  Similarity similarity = Similarity::kCosine;
};

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
};

// Document text as embedded: title prepended when present.
std::string doc_embedding_text(const DocRecord& doc);

// Embeds every document (kind = passage), in corpus order, processing
// batch_size texts at a time (chunking never changes the result).
EmbeddingIndex embed_corpus(const Embedder& embedder,
                            const RetrievalDataset& dataset,
                            Similarity similarity = Similarity::kCosine,
                            std::size_t batch_size = 32);

// Top-k by similarity, score descending, ties broken by ascending doc_id.
// k >= 1 and a nonempty index are required; k > N returns all N.
std::vector<ScoredDoc> search(const EmbeddingIndex& index,
                              const Tensor<float>& query_emb, std::size_t k);

// ==================== evaluation report ====================

struct LanguageMetrics {
  std::size_t lang_id = 0;
  double ndcg10 = 0.0;
  double recall10 = 0.0;
  double recall100 = 0.0;
  std::size_t num_queries = 0;
};

struct MetricReport {
  std::string model;
  std::vector<LanguageMetrics> languages;
  double macro_ndcg10 = 0.0;
  double macro_recall10 = 0.0;
  double macro_recall100 = 0.0;
};

// Embeds queries (kind = query) and corpus (kind = passage), searches, and
// macro-averages NDCG@10 / Recall@10 / Recall@100 over queries that have at
// least one relevant document.
LanguageMetrics evaluate_language(const Embedder& embedder,
                                  const RetrievalDataset& dataset,
                                  std::size_t lang_id);

// Fills macro averages (mean of per-language values).
MetricReport make_report(std::string model,
                         std::vector<LanguageMetrics> languages);

// Deterministic serializations of a report.
std::string report_to_json(const MetricReport& report);
std::string report_to_table(const MetricReport& report);

}  // namespace xlret
