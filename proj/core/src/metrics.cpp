// SPDX-License-Identifier: Apache-2.0
#include "xlret/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "xlret/errors.hpp"
#include "xlret/rng.hpp"

namespace xlret {

namespace {

double rank_gain(std::size_t rank_1_based) {
  return 1.0 / std::log2(static_cast<double>(rank_1_based) + 1.0);
}

double ideal_dcg(std::size_t num_relevant, std::size_t k) {
  double ideal = 0.0;
  for (std::size_t r = 1; r <= std::min(num_relevant, k); ++r) {
    ideal += rank_gain(r);
  }
  return ideal;
}

}  // namespace

double ndcg_at_k(const std::vector<std::string>& ranking,
                 const std::set<std::string>& relevant, std::size_t k) {
  if (k < 1) throw ContractError("ndcg_at_k: k must be >= 1");
  if (relevant.empty()) {
    throw ContractError(
        "ndcg_at_k: query has no relevant documents; exclude it upstream");
  }
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(ranking.size(), k); ++i) {
    if (relevant.count(ranking[i]) != 0) dcg += rank_gain(i + 1);
  }
  return dcg / ideal_dcg(relevant.size(), k);
}

double recall_at_k(const std::vector<std::string>& ranking,
                   const std::set<std::string>& relevant, std::size_t k) {
  if (k < 1) throw ContractError("recall_at_k: k must be >= 1");
  if (relevant.empty()) {
    throw ContractError(
        "recall_at_k: query has no relevant documents; exclude it upstream");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(ranking.size(), k); ++i) {
    if (relevant.count(ranking[i]) != 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

std::vector<std::pair<std::string, std::set<std::string>>> relevant_by_query(
    const RetrievalDataset& dataset) {
  std::map<std::string, std::set<std::string>> by_query;
  for (const QrelRecord& r : dataset.qrels) {
    if (r.relevance > 0) by_query[r.query_id].insert(r.doc_id);
  }
  std::vector<std::pair<std::string, std::set<std::string>>> out;
  out.reserve(dataset.queries.size());
  for (const QueryRecord& q : dataset.queries) {
    auto it = by_query.find(q.id);
    if (it != by_query.end() && !it->second.empty()) {
      out.emplace_back(q.id, it->second);
    }
  }
  return out;
}

RandomBaseline random_baseline_ndcg(const RetrievalDataset& dataset,
                                    std::size_t k, std::size_t trials,
                                    std::uint64_t seed) {
  if (trials < 1000) {
    throw ContractError("random_baseline_ndcg: trials must be >= 1000");
  }
  const std::size_t n = dataset.corpus.size();
  if (n == 0 || k < 1) {
    throw ContractError("random_baseline_ndcg: empty corpus or k < 1");
  }
  // Only the relevant count matters for a random ranking, so draw the top-k
  // slots of a random permutation of {0..n-1} and treat indices < R as
  // relevant.
  std::vector<std::size_t> relevant_counts;
  for (const auto& [query_id, relevant] : relevant_by_query(dataset)) {
    relevant_counts.push_back(relevant.size());
  }
  if (relevant_counts.empty()) {
    throw ContractError("random_baseline_ndcg: no query has relevant docs");
  }

  Rng rng(seed);
  const std::size_t depth = std::min(k, n);
  std::vector<std::size_t> pool(n);
  double total = 0.0;
  double total_sq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    double trial_sum = 0.0;
    for (std::size_t r : relevant_counts) {
      for (std::size_t i = 0; i < n; ++i) pool[i] = i;
      double dcg = 0.0;
      for (std::size_t i = 0; i < depth; ++i) {  // partial Fisher-Yates
        const std::size_t j = i + rng.uniform_index(n - i);
        std::swap(pool[i], pool[j]);
        if (pool[i] < r) dcg += rank_gain(i + 1);
      }
      trial_sum += dcg / ideal_dcg(r, k);
    }
    const double trial_mean =
        trial_sum / static_cast<double>(relevant_counts.size());
    total += trial_mean;
    total_sq += trial_mean * trial_mean;
  }
  RandomBaseline out;
  out.mean = total / static_cast<double>(trials);
  const double variance =
      std::max(0.0, total_sq / static_cast<double>(trials) -
                        out.mean * out.mean);
  out.standard_error = std::sqrt(variance / static_cast<double>(trials));
  return out;
}

}  // namespace xlret
