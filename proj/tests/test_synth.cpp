// SPDX-License-Identifier: Apache-2.0
// Topic model structure (disjoint heads, normalized distributions, head
// mass), cipher-language bijectivity, dataset invariants (qrels coverage,
// topic separation), translation round trips, and parallel-corpus balance.
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "test_support.hpp"
#include "xlret/errors.hpp"
#include "xlret/synth.hpp"
#include "xlret/tokenizer.hpp"

using namespace xlret;

namespace {

TopicModelConfig small_config() {
  TopicModelConfig cfg;
  cfg.num_topics = 4;
  cfg.vocab_size = 200;
  cfg.head_size = 10;
  cfg.head_mass = 0.8;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("topic distributions are normalized and cover the whole vocab") {
  TopicModel tm = TopicModel::build(small_config());
  REQUIRE(tm.num_topics() == 4);
  REQUIRE(tm.words().size() == 200);
  for (std::size_t t = 0; t < tm.num_topics(); ++t) {
    const auto dist = tm.distribution(t);
    REQUIRE(dist.size() == 200);
    double sum = 0.0;
    for (double p : dist) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("topic heads are disjoint word sets") {
  TopicModel tm = TopicModel::build(small_config());
  std::set<std::string> seen;
  for (std::size_t t = 0; t < tm.num_topics(); ++t) {
    for (const std::string& w : tm.top_words(t, 10)) {
      CHECK(seen.insert(w).second);  // never owned by two topics
    }
  }
  CHECK(seen.size() == 4 * 10);
}

TEST_CASE("head words carry head_mass of the probability") {
  TopicModel tm = TopicModel::build(small_config());
  const auto dist = tm.distribution(1);
  const auto head = tm.top_words(1, 10);
  std::unordered_set<std::string> head_set(head.begin(), head.end());
  double head_prob = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (head_set.count(tm.words()[i])) head_prob += dist[i];
  }
  CHECK(std::abs(head_prob - 0.8) < 1e-12);
}

TEST_CASE("top_words returns the head in rank order") {
  TopicModel tm = TopicModel::build(small_config());
  const auto dist = tm.distribution(2);
  const auto top = tm.top_words(2, 10);
  double prev = 2.0;
  for (const std::string& w : top) {
    const auto it = std::find(tm.words().begin(), tm.words().end(), w);
    REQUIRE(it != tm.words().end());
    const double p = dist[static_cast<std::size_t>(it - tm.words().begin())];
    CHECK(p <= prev);
    prev = p;
  }
}

TEST_CASE("sampling is seed-deterministic and favours head words") {
  TopicModel tm = TopicModel::build(small_config());
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) {
    CHECK(tm.sample_word(0, a) == tm.sample_word(0, b));
  }
  // Empirical head frequency should sit near head_mass.
  const auto head = tm.top_words(3, 10);
  std::unordered_set<std::string> head_set(head.begin(), head.end());
  Rng rng(5);
  int hits = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    if (head_set.count(tm.sample_word(3, rng))) ++hits;
  }
  const double freq = static_cast<double>(hits) / n;
  CHECK(freq > 0.74);
  CHECK(freq < 0.86);
}

TEST_CASE("sample_text yields the requested number of vocabulary words") {
  TopicModel tm = TopicModel::build(small_config());
  Rng rng(11);
  const std::string text = tm.sample_text(0, 12, rng);
  const auto words = split_words(text);
  REQUIRE(words.size() == 12);
  std::unordered_set<std::string> vocab(tm.words().begin(), tm.words().end());
  for (const auto& w : words) CHECK(vocab.count(w) == 1);
}

TEST_CASE("invalid topic model configurations fail loudly") {
  TopicModelConfig cfg = small_config();
  cfg.head_size = 60;  // 4 * 60 > 200: heads cannot be disjoint
  CHECK_THROWS_AS(TopicModel::build(cfg), ConfigError);
  cfg = small_config();
  cfg.num_topics = 0;
  CHECK_THROWS_AS(TopicModel::build(cfg), ConfigError);
  cfg = small_config();
  cfg.head_mass = 1.5;
  CHECK_THROWS_AS(TopicModel::build(cfg), ConfigError);
  TopicModel tm = TopicModel::build(small_config());
  CHECK_THROWS_AS(tm.distribution(4), ContractError);
}

TEST_CASE("identity language maps every word to itself") {
  TopicModel tm = TopicModel::build(small_config());
  CipherLanguage lang0 = CipherLanguage::identity(tm.words());
  CHECK(lang0.lang_id == 0);
  for (const std::string& w : tm.words()) {
    CHECK(lang0.surface(w) == w);
    CHECK(lang0.source(w) == w);
  }
}

TEST_CASE("permuted language is a bijection with disjoint surfaces") {
  TopicModel tm = TopicModel::build(small_config());
  CipherLanguage lang2 = CipherLanguage::permuted(2, tm.words(), 42);
  CHECK(lang2.lang_id == 2);
  std::unordered_set<std::string> sources(tm.words().begin(),
                                          tm.words().end());
  std::set<std::string> surfaces;
  for (const std::string& w : tm.words()) {
    const std::string& s = lang2.surface(w);
    CHECK(s.rfind("l2_", 0) == 0);        // tagged with the language
    CHECK(sources.count(s) == 0);         // disjoint from language 0
    CHECK(surfaces.insert(s).second);     // injective
    CHECK(lang2.source(s) == w);          // invertible
  }
  CHECK(surfaces.size() == tm.words().size());
  CHECK_THROWS_AS(lang2.surface("not_a_word"), DataError);
  CHECK_THROWS_AS(lang2.source("not_a_surface"), DataError);
}

TEST_CASE("permutation actually shuffles the payload words") {
  TopicModel tm = TopicModel::build(small_config());
  CipherLanguage lang1 = CipherLanguage::permuted(1, tm.words(), 42);
  std::size_t moved = 0;
  for (const std::string& w : tm.words()) {
    if (lang1.surface(w) != "l1_" + w) ++moved;
  }
  CHECK(moved > tm.words().size() / 2);
}

TEST_CASE("make_languages: identity first, seed-deterministic ciphers") {
  TopicModel tm = TopicModel::build(small_config());
  auto langs = make_languages(tm.words(), 3, 77);
  REQUIRE(langs.size() == 3);
  CHECK(langs[0].surface(tm.words()[0]) == tm.words()[0]);
  CHECK(langs[1].lang_id == 1);
  CHECK(langs[2].lang_id == 2);
  // Different languages permute differently (overwhelmingly likely).
  std::size_t differ = 0;
  for (const std::string& w : tm.words()) {
    if (langs[1].surface(w).substr(3) != langs[2].surface(w).substr(3)) {
      ++differ;
    }
  }
  CHECK(differ > 0);

  auto again = make_languages(tm.words(), 3, 77);
  for (const std::string& w : tm.words()) {
    CHECK(again[1].surface(w) == langs[1].surface(w));
    CHECK(again[2].surface(w) == langs[2].surface(w));
  }
}

TEST_CASE("generated dataset satisfies the retrieval invariants") {
  TopicModel tm = TopicModel::build(small_config());
  RetrievalDataset ds = generate_dataset(tm, 40, 12, 20, 5, 3);
  REQUIRE(ds.corpus.size() == 40);
  REQUIRE(ds.queries.size() == 12);

  std::set<std::string> doc_ids, query_ids;
  for (const auto& d : ds.corpus) {
    CHECK(doc_ids.insert(d.id).second);
    CHECK(split_words(d.text).size() == 20);
  }
  for (const auto& q : ds.queries) {
    CHECK(query_ids.insert(q.id).second);
    CHECK(split_words(q.text).size() == 5);
  }
  std::set<std::string> with_positive;
  for (const auto& r : ds.qrels) {
    CHECK(query_ids.count(r.query_id) == 1);
    CHECK(doc_ids.count(r.doc_id) == 1);
    CHECK(r.relevance > 0);
    with_positive.insert(r.query_id);
  }
  CHECK(with_positive.size() == ds.queries.size());

  RetrievalDataset again = generate_dataset(tm, 40, 12, 20, 5, 3);
  CHECK(again == ds);
  RetrievalDataset other = generate_dataset(tm, 40, 12, 20, 5, 4);
  CHECK(other != ds);
}

TEST_CASE("same-topic pairs share more vocabulary than cross-topic pairs") {
  // Queries should overlap their relevant documents' word sets far more
  // than irrelevant ones — this is the signal retrieval training exploits.
  TopicModel tm = TopicModel::build(small_config());
  RetrievalDataset ds = generate_dataset(tm, 60, 20, 40, 8, 9);
  std::unordered_map<std::string, std::set<std::string>> doc_words;
  for (const auto& d : ds.corpus) {
    const auto w = split_words(d.text);
    doc_words[d.id] = {w.begin(), w.end()};
  }
  std::unordered_map<std::string, std::set<std::string>> rel;
  for (const auto& r : ds.qrels) rel[r.query_id].insert(r.doc_id);

  double rel_overlap = 0.0, irrel_overlap = 0.0;
  std::size_t rel_n = 0, irrel_n = 0;
  for (const auto& q : ds.queries) {
    const auto qw = split_words(q.text);
    for (const auto& d : ds.corpus) {
      std::size_t shared = 0;
      for (const auto& w : qw) shared += doc_words[d.id].count(w);
      if (rel[q.id].count(d.id)) {
        rel_overlap += static_cast<double>(shared);
        ++rel_n;
      } else {
        irrel_overlap += static_cast<double>(shared);
        ++irrel_n;
      }
    }
  }
  REQUIRE(rel_n > 0);
  REQUIRE(irrel_n > 0);
  CHECK(rel_overlap / static_cast<double>(rel_n) >
        2.0 * irrel_overlap / static_cast<double>(irrel_n));
}

TEST_CASE("translate_dataset ciphers words and preserves structure") {
  TopicModel tm = TopicModel::build(small_config());
  RetrievalDataset ds = generate_dataset(tm, 10, 4, 15, 5, 21);
  auto langs = make_languages(tm.words(), 2, 13);
  RetrievalDataset translated = translate_dataset(ds, langs[1]);

  REQUIRE(translated.corpus.size() == ds.corpus.size());
  REQUIRE(translated.queries.size() == ds.queries.size());
  CHECK(translated.qrels == ds.qrels);  // relevance is language-invariant

  for (std::size_t i = 0; i < ds.corpus.size(); ++i) {
    CHECK(translated.corpus[i].id == ds.corpus[i].id);
    const auto src = split_words(ds.corpus[i].text);
    const auto dst = split_words(translated.corpus[i].text);
    REQUIRE(src.size() == dst.size());
    for (std::size_t j = 0; j < src.size(); ++j) {
      CHECK(dst[j] == langs[1].surface(src[j]));
      CHECK(langs[1].source(dst[j]) == src[j]);  // round trip
    }
  }
  // Identity translation is a no-op.
  RetrievalDataset same = translate_dataset(ds, langs[0]);
  CHECK(same == ds);
}

TEST_CASE("parallel corpus balances target languages and aligns content") {
  TopicModel tm = TopicModel::build(small_config());
  auto langs = make_languages(tm.words(), 4, 17);
  auto pairs = make_parallel_corpus(tm, langs, 32, 23);
  REQUIRE(pairs.size() == 32);

  std::unordered_map<std::size_t, std::size_t> per_lang;
  for (const auto& p : pairs) {
    CHECK(p.lang_id >= 1);
    CHECK(p.lang_id <= 3);
    ++per_lang[p.lang_id];
    const auto src = split_words(p.source);
    const auto dst = split_words(p.target);
    REQUIRE(src.size() == dst.size());
    CHECK(src.size() >= 8);
    CHECK(src.size() <= 16);
    for (std::size_t j = 0; j < src.size(); ++j) {
      CHECK(langs[p.lang_id].surface(src[j]) == dst[j]);
    }
  }
  // Round-robin: counts differ by at most 1.
  std::size_t lo = pairs.size(), hi = 0;
  for (std::size_t k = 1; k <= 3; ++k) {
    lo = std::min(lo, per_lang[k]);
    hi = std::max(hi, per_lang[k]);
  }
  CHECK(hi - lo <= 1);

  auto again = make_parallel_corpus(tm, langs, 32, 23);
  CHECK(again == pairs);
}

TEST_CASE("parallel corpus requires at least one non-identity language") {
  TopicModel tm = TopicModel::build(small_config());
  auto only_identity = make_languages(tm.words(), 1, 3);
  CHECK_THROWS_AS(make_parallel_corpus(tm, only_identity, 8, 1),
                  ContractError);
}
