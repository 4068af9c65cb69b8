// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "xlret/rng.hpp"

namespace xlret {

// ==================== topic model ====================

struct TopicModelConfig {
  std::size_t num_topics = 8;
  std::size_t vocab_size = 2000;  // content words shared by all topics
  std::size_t head_size = 40;     // high-probability words owned per topic
  double head_mass = 0.8;         // probability of drawing from the head
  std::uint64_t seed = 1234;
};

// Mixture of per-topic Zipf heads over disjoint word sets plus a shared
// Zipf tail. Disjoint heads guarantee that same-topic texts share rare
// vocabulary, which is the retrieval signal the benchmark is built around.
class TopicModel {
 public:
  static TopicModel build(const TopicModelConfig& config);

  std::size_t num_topics() const { return heads_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  // Full probability vector over words() for `topic`; sums to 1.
  std::vector<double> distribution(std::size_t topic) const;

  // The n most probable words of `topic`, most probable first.
  std::vector<std::string> top_words(std::size_t topic, std::size_t n) const;

  const std::string& sample_word(std::size_t topic, Rng& rng) const;
  std::string sample_text(std::size_t topic, std::size_t num_words,
                          Rng& rng) const;

 private:
  std::vector<std::string> words_;
  std::vector<std::vector<std::size_t>> heads_;  // per topic, rank order
  std::vector<std::size_t> tail_;                // shared across topics
  std::vector<double> head_cdf_;                 // cumulative Zipf weights
  std::vector<double> tail_cdf_;
  double head_mass_ = 0.8;

  void check_topic(std::size_t topic) const;
};

// ==================== cipher languages ====================

// Bijective word-substitution language. Language 0 is the identity (plays
// the role of the training language); language k >= 1 maps each content
// word to the surface "L<k>_<permuted word>", so its vocabulary is fully
// disjoint from language 0 while semantics are preserved exactly.
struct CipherLanguage {
  std::size_t lang_id = 0;
  std::unordered_map<std::string, std::string> forward;
  std::unordered_map<std::string, std::string> inverse;

  static CipherLanguage identity(const std::vector<std::string>& words);
  static CipherLanguage permuted(std::size_t lang_id,
                                 const std::vector<std::string>& words,
                                 std::uint64_t seed);

  // Surface form of `word`; uncovered word is a data error.
  const std::string& surface(const std::string& word) const;
  // Source word of `surface`; uncovered surface is a data error.
  const std::string& source(const std::string& surface) const;
};

// Language 0 identity plus num_languages-1 seeded permutation ciphers.
std::vector<CipherLanguage> make_languages(
    const std::vector<std::string>& words, std::size_t num_languages,
    std::uint64_t seed);

// ==================== retrieval dataset ====================

struct DocRecord {
  std::string id;
  std::string title;
  std::string text;
  bool operator==(const DocRecord&) const = default;
};

struct QueryRecord {
  std::string id;
  std::string text;
  bool operator==(const QueryRecord&) const = default;
};

struct QrelRecord {
  std::string query_id;
  std::string doc_id;
  int relevance = 0;
  bool operator==(const QrelRecord&) const = default;
};

struct RetrievalDataset {
  std::vector<DocRecord> corpus;
  std::vector<QueryRecord> queries;
  std::vector<QrelRecord> qrels;
  bool operator==(const RetrievalDataset&) const = default;
};

// Documents draw a topic uniformly and sample doc_len words i.i.d. from it;
// queries do the same with query_len words, retrying (then failing loudly)
// if their topic has no documents. Qrels mark every same-topic document
// relevant, so each query is guaranteed at least one relevant document.
RetrievalDataset generate_dataset(const TopicModel& topics,
                                  std::size_t num_docs,
                                  std::size_t num_queries, std::size_t doc_len,
                                  std::size_t query_len, std::uint64_t seed);

// Word-for-word ciphered copy; ids and qrels unchanged.
RetrievalDataset translate_dataset(const RetrievalDataset& dataset,
                                   const CipherLanguage& cipher);

// ==================== parallel corpus ====================

struct ParallelPair {
  std::string source;  // language 0
  std::string target;  // language lang_id
  std::size_t lang_id = 0;
  bool operator==(const ParallelPair&) const = default;
};

// Sentence pairs for alignment pretraining: target languages assigned
// round-robin over the non-identity languages (per-language counts differ
// by at most 1), topics drawn uniformly, lengths in [8, 16] words.
std::vector<ParallelPair> make_parallel_corpus(
    const TopicModel& topics, const std::vector<CipherLanguage>& languages,
    std::size_t num_pairs, std::uint64_t seed);

}  // namespace xlret
