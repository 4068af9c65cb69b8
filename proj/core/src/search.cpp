// SPDX-License-Identifier: Apache-2.0
#include "xlret/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "xlret/errors.hpp"
#include "xlret/metrics.hpp"

namespace xlret {

namespace {

double dot(const float* a, const float* b, std::size_t n) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return total;
}

double norm(const float* a, std::size_t n) {
  return std::sqrt(dot(a, a, n));
}

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%9.4f", v);
  return buf;
}

}  // namespace

std::string doc_embedding_text(const DocRecord& doc) {
  if (doc.title.empty()) return doc.text;
  return doc.title + " " + doc.text;
}

EmbeddingIndex embed_corpus(const Embedder& embedder,
                            const RetrievalDataset& dataset,
                            Similarity similarity, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("embed_corpus: batch_size = 0");
  EmbeddingIndex index;
  index.similarity = similarity;
  for (std::size_t start = 0; start < dataset.corpus.size();
       start += batch_size) {
    const std::size_t end =
        std::min(start + batch_size, dataset.corpus.size());
    for (std::size_t i = start; i < end; ++i) {
      const DocRecord& doc = dataset.corpus[i];
      Tensor<float> emb;
      try {
        emb = embedder(doc_embedding_text(doc), InputKind::kPassage);
      } catch (const Error& e) {
        throw DataError("embed_corpus: document '" + doc.id +
                        "': " + e.what());
      }
      if (index.dim == 0) index.dim = emb.numel();
      if (emb.numel() != index.dim) {
        throw ShapeError("embed_corpus: document '" + doc.id +
                         "' embedding width " + std::to_string(emb.numel()) +
                         " != " + std::to_string(index.dim));
      }
      index.doc_ids.push_back(doc.id);
      auto v = emb.values();
      index.data.insert(index.data.end(), v.begin(), v.end());
    }
  }
  return index;
}

std::vector<ScoredDoc> search(const EmbeddingIndex& index,
                              const Tensor<float>& query_emb, std::size_t k) {
  if (k < 1) throw ContractError("search: k must be >= 1");
  const std::size_t n = index.doc_ids.size();
  if (n == 0) throw ContractError("search: empty index");
  if (query_emb.numel() != index.dim) {
    throw ShapeError("search: query width " +
                     std::to_string(query_emb.numel()) + " != index width " +
                     std::to_string(index.dim));
  }
  const float* q = query_emb.values().data();
  const double qn = norm(q, index.dim);
  std::vector<ScoredDoc> scored;
  scored.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = index.data.data() + i * index.dim;
    double s = dot(q, row, index.dim);
    if (index.similarity == Similarity::kCosine) {
      const double dn = norm(row, index.dim);
      s = (qn == 0.0 || dn == 0.0) ? 0.0 : s / (qn * dn);
    }
    scored.push_back({index.doc_ids[i], s});
  }
  const std::size_t keep = std::min(k, n);
  auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  };
  std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                    better);
  scored.resize(keep);
  return scored;
}

LanguageMetrics evaluate_language(const Embedder& embedder,
                                  const RetrievalDataset& dataset,
                                  std::size_t lang_id) {
  const EmbeddingIndex index = embed_corpus(embedder, dataset);
  const auto relevant = relevant_by_query(dataset);
  LanguageMetrics m;
  m.lang_id = lang_id;
  for (const QueryRecord& q : dataset.queries) {
    auto it = std::find_if(relevant.begin(), relevant.end(),
                           [&q](const auto& r) { return r.first == q.id; });
    if (it == relevant.end()) continue;  // zero-relevant query: excluded
    const Tensor<float> emb = embedder(q.text, InputKind::kQuery);
    const std::vector<ScoredDoc> top = search(index, emb, 100);
    std::vector<std::string> ranking;
    ranking.reserve(top.size());
    for (const ScoredDoc& sd : top) ranking.push_back(sd.doc_id);
    m.ndcg10 += ndcg_at_k(ranking, it->second, 10);
    m.recall10 += recall_at_k(ranking, it->second, 10);
    m.recall100 += recall_at_k(ranking, it->second, 100);
    ++m.num_queries;
  }
  if (m.num_queries > 0) {
    const double n = static_cast<double>(m.num_queries);
    m.ndcg10 /= n;
    m.recall10 /= n;
    m.recall100 /= n;
  }
  return m;
}

MetricReport make_report(std::string model,
                         std::vector<LanguageMetrics> languages) {
  MetricReport report;
  report.model = std::move(model);
  report.languages = std::move(languages);
  if (!report.languages.empty()) {
    for (const LanguageMetrics& lm : report.languages) {
      report.macro_ndcg10 += lm.ndcg10;
      report.macro_recall10 += lm.recall10;
      report.macro_recall100 += lm.recall100;
    }
    const double n = static_cast<double>(report.languages.size());
    report.macro_ndcg10 /= n;
    report.macro_recall10 /= n;
    report.macro_recall100 /= n;
  }
  return report;
}

std::string report_to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["model"] = report.model;
  nlohmann::ordered_json langs;
  for (const LanguageMetrics& lm : report.languages) {
    nlohmann::ordered_json entry;
    entry["ndcg@10"] = lm.ndcg10;
    entry["recall@10"] = lm.recall10;
    entry["recall@100"] = lm.recall100;
    entry["queries"] = lm.num_queries;
    langs["lang" + std::to_string(lm.lang_id)] = std::move(entry);
  }
  j["languages"] = std::move(langs);
  j["macro"] = {{"ndcg@10", report.macro_ndcg10},
                {"recall@10", report.macro_recall10},
                {"recall@100", report.macro_recall100}};
  return j.dump(2) + "\n";
}

std::string report_to_table(const MetricReport& report) {
  std::string out;
  out += "model        language     NDCG@10  Recall@10 Recall@100\n";
  out += "------------ ---------- --------- ---------- ----------\n";
  char line[128];
  for (const LanguageMetrics& lm : report.languages) {
    std::snprintf(line, sizeof(line), "%-12s %-10s %s  %s  %s\n",
                  report.model.c_str(),
                  ("lang" + std::to_string(lm.lang_id)).c_str(),
                  format_metric(lm.ndcg10).c_str(),
                  format_metric(lm.recall10).c_str(),
                  format_metric(lm.recall100).c_str());
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-12s %-10s %s  %s  %s\n",
                report.model.c_str(), "macro",
                format_metric(report.macro_ndcg10).c_str(),
                format_metric(report.macro_recall10).c_str(),
                format_metric(report.macro_recall100).c_str());
  out += line;
  return out;
}

}  // namespace xlret
