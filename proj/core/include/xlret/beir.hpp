// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "xlret/synth.hpp"

namespace xlret {

// BEIR-compatible directory layout:
//   <dir>/corpus.jsonl          {"_id", "title", "text"} per line
//   <dir>/queries.jsonl         {"_id", "text"} per line
//   <dir>/qrels/test.tsv        header + tab-separated query-id, corpus-id, score
// write followed by read is an identity transformation.
void write_beir(const RetrievalDataset& dataset,
                const std::filesystem::path& dir);
RetrievalDataset read_beir(const std::filesystem::path& dir);

// Parallel sentence pairs as JSONL: {"source", "target", "lang_id"} per line.
void write_parallel(const std::vector<ParallelPair>& pairs,
                    const std::filesystem::path& file);
std::vector<ParallelPair> read_parallel(const std::filesystem::path& file);

}  // namespace xlret
