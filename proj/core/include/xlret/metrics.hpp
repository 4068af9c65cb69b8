// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "xlret/synth.hpp"

namespace xlret {

// NDCG@k for one query with binary relevance: DCG over ranks 1..k with
// gain 1/log2(rank+1), normalized by the ideal DCG. `ranking` is best-first
// doc ids. The relevant set must be nonempty (zero-relevant queries are
// excluded from averages by the caller); k >= 1.
double ndcg_at_k(const std::vector<std::string>& ranking,
                 const std::set<std::string>& relevant, std::size_t k = 10);

// Fraction of the relevant set present in the top k.
double recall_at_k(const std::vector<std::string>& ranking,
                   const std::set<std::string>& relevant, std::size_t k);

struct RandomBaseline {
  double mean = 0.0;
  double standard_error = 0.0;
};

// Monte-Carlo estimate of the NDCG@k a uniformly random ranking achieves on
// `dataset`, averaged over queries; trials >= 1000.
RandomBaseline random_baseline_ndcg(const RetrievalDataset& dataset,
                                    std::size_t k, std::size_t trials,
                                    std::uint64_t seed);

// Relevant doc ids per query id, from binary qrels (relevance > 0).
std::vector<std::pair<std::string, std::set<std::string>>> relevant_by_query(
    const RetrievalDataset& dataset);

}  // namespace xlret
