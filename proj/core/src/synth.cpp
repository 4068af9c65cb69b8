// SPDX-License-Identifier: Apache-2.0
#include "xlret/synth.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "xlret/errors.hpp"

namespace xlret {

namespace {

// Pronounceable consonant-vowel pseudo-words, 2-4 syllables.
std::string make_pseudo_word(Rng& rng) {
  static const std::string consonants = "bcdfghjklmnprstvwz";
  static const std::string vowels = "aeiou";
  const std::size_t syllables = 2 + rng.uniform_index(3);
  std::string word;
  for (std::size_t s = 0; s < syllables; ++s) {
    word.push_back(consonants[rng.uniform_index(consonants.size())]);
    word.push_back(vowels[rng.uniform_index(vowels.size())]);
  }
  return word;
}

// Cumulative distribution of Zipf weights 1/rank over n items, normalized.
std::vector<double> zipf_cdf(std::size_t n) {
  std::vector<double> cdf(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) total += 1.0 / static_cast<double>(r + 1);
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    acc += 1.0 / static_cast<double>(r + 1) / total;
    cdf[r] = acc;
  }
  if (!cdf.empty()) cdf.back() = 1.0;  // close the interval against rounding
  return cdf;
}

std::size_t sample_cdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform();
  return static_cast<std::size_t>(
      std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

// Splits canonical generated text (single-space separated, no lowercasing,
// so cipher surfaces keep their exact form).
std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(std::move(w));
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i != 0) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::string padded_id(char prefix, std::size_t index) {
  std::string digits = std::to_string(index);
  while (digits.size() < 5) digits.insert(digits.begin(), '0');
  return std::string(1, prefix) + digits;
}

}  // namespace

// ==================== TopicModel ====================

TopicModel TopicModel::build(const TopicModelConfig& config) {
  if (config.num_topics == 0) throw ConfigError("topic model: num_topics = 0");
  if (config.head_size == 0) throw ConfigError("topic model: head_size = 0");
  if (config.head_mass <= 0.0 || config.head_mass > 1.0) {
    throw ConfigError("topic model: head_mass must lie in (0, 1]");
  }
  const std::size_t head_total = config.num_topics * config.head_size;
  if (config.vocab_size < head_total) {
    throw ConfigError("topic model: vocab_size " +
                      std::to_string(config.vocab_size) +
                      " cannot hold " + std::to_string(config.num_topics) +
                      " disjoint heads of " + std::to_string(config.head_size));
  }

  Rng rng(config.seed);
  std::set<std::string> unique;
  while (unique.size() < config.vocab_size) {
    unique.insert(make_pseudo_word(rng));
  }

  TopicModel model;
  model.words_.assign(unique.begin(), unique.end());
  std::vector<std::size_t> order(model.words_.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  model.heads_.resize(config.num_topics);
  std::size_t cursor = 0;
  for (std::size_t t = 0; t < config.num_topics; ++t) {
    model.heads_[t].assign(order.begin() + cursor,
                           order.begin() + cursor + config.head_size);
    cursor += config.head_size;
  }
  model.tail_.assign(order.begin() + cursor, order.end());

  // A model whose heads exhaust the vocabulary has no tail to share.
  model.head_mass_ = model.tail_.empty() ? 1.0 : config.head_mass;
  model.head_cdf_ = zipf_cdf(config.head_size);
  model.tail_cdf_ = zipf_cdf(model.tail_.size());
  return model;
}

void TopicModel::check_topic(std::size_t topic) const {
  if (topic >= heads_.size()) {
    throw ContractError("topic model: topic " + std::to_string(topic) +
                        " out of range for " + std::to_string(heads_.size()));
  }
}

std::vector<double> TopicModel::distribution(std::size_t topic) const {
  check_topic(topic);
  std::vector<double> p(words_.size(), 0.0);
  double prev = 0.0;
  for (std::size_t r = 0; r < heads_[topic].size(); ++r) {
    p[heads_[topic][r]] += head_mass_ * (head_cdf_[r] - prev);
    prev = head_cdf_[r];
  }
  prev = 0.0;
  for (std::size_t r = 0; r < tail_.size(); ++r) {
    p[tail_[r]] += (1.0 - head_mass_) * (tail_cdf_[r] - prev);
    prev = tail_cdf_[r];
  }
  return p;
}

std::vector<std::string> TopicModel::top_words(std::size_t topic,
                                               std::size_t n) const {
  check_topic(topic);
  std::vector<std::string> out;
  for (std::size_t r = 0; r < n && r < heads_[topic].size(); ++r) {
    out.push_back(words_[heads_[topic][r]]);
  }
  return out;
}

const std::string& TopicModel::sample_word(std::size_t topic, Rng& rng) const {
  check_topic(topic);
  if (rng.uniform() < head_mass_) {
    return words_[heads_[topic][sample_cdf(head_cdf_, rng)]];
  }
  return words_[tail_[sample_cdf(tail_cdf_, rng)]];
}

std::string TopicModel::sample_text(std::size_t topic, std::size_t num_words,
                                    Rng& rng) const {
  std::vector<std::string> words;
  words.reserve(num_words);
  for (std::size_t i = 0; i < num_words; ++i) {
    words.push_back(sample_word(topic, rng));
  }
  return join_words(words);
}

// ==================== CipherLanguage ====================

CipherLanguage CipherLanguage::identity(const std::vector<std::string>& words) {
  CipherLanguage c;
  c.lang_id = 0;
  for (const std::string& w : words) {
    c.forward.emplace(w, w);
    c.inverse.emplace(w, w);
  }
  return c;
}

CipherLanguage CipherLanguage::permuted(std::size_t lang_id,
                                        const std::vector<std::string>& words,
                                        std::uint64_t seed) {
  if (lang_id == 0) {
    throw ContractError("cipher: language 0 is reserved for the identity");
  }
  CipherLanguage c;
  c.lang_id = lang_id;
  std::vector<std::size_t> perm(words.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(hash_combine(seed, lang_id));
  rng.shuffle(perm);
  // Lowercase so surfaces pass through word splitting (which lowercases)
  // unchanged, keeping surface() / source() a round trip on tokenized text.
  const std::string prefix = "l" + std::to_string(lang_id) + "_";
  for (std::size_t i = 0; i < words.size(); ++i) {
    c.forward.emplace(words[i], prefix + words[perm[i]]);
    c.inverse.emplace(prefix + words[perm[i]], words[i]);
  }
  return c;
}

const std::string& CipherLanguage::surface(const std::string& word) const {
  auto it = forward.find(word);
  if (it == forward.end()) {
    throw DataError("cipher for language " + std::to_string(lang_id) +
                    " does not cover word '" + word + "'");
  }
  return it->second;
}

const std::string& CipherLanguage::source(const std::string& surface) const {
  auto it = inverse.find(surface);
  if (it == inverse.end()) {
    throw DataError("cipher for language " + std::to_string(lang_id) +
                    " does not cover surface '" + surface + "'");
  }
  return it->second;
}

std::vector<CipherLanguage> make_languages(
    const std::vector<std::string>& words, std::size_t num_languages,
    std::uint64_t seed) {
  if (num_languages == 0) {
    throw ConfigError("make_languages: need at least language 0");
  }
  std::vector<CipherLanguage> langs;
  langs.push_back(CipherLanguage::identity(words));
  for (std::size_t k = 1; k < num_languages; ++k) {
    langs.push_back(CipherLanguage::permuted(k, words, seed));
  }
  return langs;
}

// ==================== dataset generation ====================

RetrievalDataset generate_dataset(const TopicModel& topics,
                                  std::size_t num_docs,
                                  std::size_t num_queries, std::size_t doc_len,
                                  std::size_t query_len, std::uint64_t seed) {
  if (num_docs == 0) throw ConfigError("generate_dataset: num_docs = 0");
  if (doc_len == 0 || query_len == 0) {
    throw ConfigError("generate_dataset: zero-length texts requested");
  }
  Rng rng(seed);
  RetrievalDataset ds;

  std::vector<std::size_t> doc_topic(num_docs);
  std::vector<std::vector<std::string>> docs_of_topic(topics.num_topics());
  for (std::size_t i = 0; i < num_docs; ++i) {
    const std::size_t topic = rng.uniform_index(topics.num_topics());
    doc_topic[i] = topic;
    DocRecord doc;
    doc.id = padded_id('d', i);
    doc.text = topics.sample_text(topic, doc_len, rng);
    docs_of_topic[topic].push_back(doc.id);
    ds.corpus.push_back(std::move(doc));
  }

  for (std::size_t i = 0; i < num_queries; ++i) {
    std::size_t topic = 0;
    bool found = false;
    for (int attempt = 0; attempt < 100; ++attempt) {
      topic = rng.uniform_index(topics.num_topics());
      if (!docs_of_topic[topic].empty()) {
        found = true;
        break;
      }
    }
    if (!found) {
      throw DataError(
          "generate_dataset: could not find a topic with documents for "
          "query " + std::to_string(i) + "; corpus too small for the "
          "topic count");
    }
    QueryRecord q;
    q.id = padded_id('q', i);
    q.text = topics.sample_text(topic, query_len, rng);
    for (const std::string& doc_id : docs_of_topic[topic]) {
      ds.qrels.push_back({q.id, doc_id, 1});
    }
    ds.queries.push_back(std::move(q));
  }
  return ds;
}

RetrievalDataset translate_dataset(const RetrievalDataset& dataset,
                                   const CipherLanguage& cipher) {
  auto translate_text = [&cipher](const std::string& text) {
    std::vector<std::string> words = split_whitespace(text);
    for (std::string& w : words) w = cipher.surface(w);
    return join_words(words);
  };
  RetrievalDataset out;
  out.corpus.reserve(dataset.corpus.size());
  for (const DocRecord& doc : dataset.corpus) {
    out.corpus.push_back(
        {doc.id, translate_text(doc.title), translate_text(doc.text)});
  }
  out.queries.reserve(dataset.queries.size());
  for (const QueryRecord& q : dataset.queries) {
    out.queries.push_back({q.id, translate_text(q.text)});
  }
  out.qrels = dataset.qrels;
  return out;
}

// ==================== parallel corpus ====================

std::vector<ParallelPair> make_parallel_corpus(
    const TopicModel& topics, const std::vector<CipherLanguage>& languages,
    std::size_t num_pairs, std::uint64_t seed) {
  if (languages.size() < 2) {
    throw ContractError(
        "make_parallel_corpus: need at least one non-identity language");
  }
  Rng rng(seed);
  std::vector<ParallelPair> pairs;
  pairs.reserve(num_pairs);
  for (std::size_t i = 0; i < num_pairs; ++i) {
    const CipherLanguage& lang = languages[1 + i % (languages.size() - 1)];
    const std::size_t topic = rng.uniform_index(topics.num_topics());
    const std::size_t len = 8 + rng.uniform_index(9);
    std::vector<std::string> words;
    words.reserve(len);
    for (std::size_t w = 0; w < len; ++w) {
      words.push_back(topics.sample_word(topic, rng));
    }
    std::vector<std::string> surfaces = words;
    for (std::string& w : surfaces) w = lang.surface(w);
    pairs.push_back({join_words(words), join_words(surfaces), lang.lang_id});
  }
  return pairs;
}

}  // namespace xlret
