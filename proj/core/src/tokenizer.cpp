// SPDX-License-Identifier: Apache-2.0
#include "xlret/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "xlret/errors.hpp"

namespace xlret {

namespace {

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

}  // namespace

const std::vector<std::string>& Vocabulary::reserved_tokens() {
  static const std::vector<std::string> reserved = {
      "[PAD]", "[BOS]", "[EOS]", "[CLS]", "[SEP]",
      "[UNK]", "query", "passage", ":"};
  return reserved;
}

std::string Vocabulary::lang_tag(std::size_t lang_id) {
  return "[LANG_" + std::to_string(lang_id) + "]";
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts,
                             std::size_t min_count,
                             std::size_t num_languages) {
  if (texts.empty()) throw DataError("vocabulary: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const std::string& t : texts) {
    for (std::string& w : split_words(t)) ++counts[std::move(w)];
  }
  if (counts.empty()) throw DataError("vocabulary: corpus contains no words");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [word, count] : counts) {
    if (count >= min_count) kept.emplace_back(word, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [word, count] : kept) words.push_back(std::move(word));
  return from_words(words, num_languages);
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words,
                                  std::size_t num_languages) {
  Vocabulary v;
  v.tokens_ = reserved_tokens();
  v.num_languages_ = num_languages;
  for (std::size_t k = 0; k < num_languages; ++k) {
    v.tokens_.push_back(lang_tag(k));
  }
  std::set<std::string> seen(v.tokens_.begin(), v.tokens_.end());
  for (const std::string& w : words) {
    if (w.empty()) throw ContractError("vocabulary: empty word");
    if (!seen.insert(w).second) continue;  // duplicate or pinned token
    v.tokens_.push_back(w);
  }
  v.rebuild_index();
  return v;
}

void Vocabulary::rebuild_index() {
  index_.clear();
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    index_.emplace(tokens_[i], static_cast<std::int32_t>(i));
  }
}

std::int32_t Vocabulary::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

std::int32_t Vocabulary::lang_tag_id(std::size_t lang_id) const {
  if (lang_id >= num_languages_) {
    throw ConfigError("vocabulary: language " + std::to_string(lang_id) +
                      " is not registered (have " +
                      std::to_string(num_languages_) + " languages)");
  }
  return static_cast<std::int32_t>(reserved_tokens().size() + lang_id);
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.find(token) != index_.end();
}

const std::string& Vocabulary::token_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("vocabulary: id " + std::to_string(id) +
                        " out of range for size " +
                        std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw DataError("vocabulary: cannot write " + file.string());
  for (const std::string& t : tokens_) out << t << '\n';
  if (!out) throw DataError("vocabulary: write failed for " + file.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("vocabulary: cannot read " + file.string());
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) v.tokens_.push_back(line);
  }
  const auto& reserved = reserved_tokens();
  if (v.tokens_.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), v.tokens_.begin())) {
    throw DataError("vocabulary: " + file.string() +
                    " does not start with the reserved token block");
  }
  std::size_t langs = 0;
  while (reserved.size() + langs < v.tokens_.size() &&
         v.tokens_[reserved.size() + langs] == lang_tag(langs)) {
    ++langs;
  }
  v.num_languages_ = langs;
  v.rebuild_index();
  if (v.index_.size() != v.tokens_.size()) {
    throw DataError("vocabulary: " + file.string() + " has duplicate tokens");
  }
  return v;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (char raw : text) {
    const char c =
        static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (is_word_char(c)) {
      current.push_back(c);
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

namespace {

TokenSequence finish_sequence(const Vocabulary& vocab,
                              std::vector<std::int32_t> lead,
                              const std::string& text, std::size_t max_len,
                              std::int32_t end_id) {
  for (const std::string& w : split_words(text)) {
    lead.push_back(vocab.id_of(w));
  }
  if (lead.size() > max_len - 1) lead.resize(max_len - 1);
  lead.push_back(end_id);
  TokenSequence seq;
  seq.ids = std::move(lead);
  seq.mask.assign(seq.ids.size(), 1);
  return seq;
}

}  // namespace

TokenSequence tokenize_multilingual(const Vocabulary& vocab,
                                    const std::string& text,
                                    std::size_t lang_id, std::size_t max_len) {
  if (max_len < 3) {
    throw ContractError("tokenize_multilingual: max_len " +
                        std::to_string(max_len) +
                        " cannot hold the [BOS]/[LANG]/[EOS] frame");
  }
  return finish_sequence(vocab,
                         {Vocabulary::kBosId, vocab.lang_tag_id(lang_id)},
                         text, max_len, Vocabulary::kEosId);
}

TokenSequence tokenize_with_affixes(const Vocabulary& vocab,
                                    const std::string& text, InputKind kind,
                                    std::size_t max_len) {
  if (max_len < 3) {
    throw ContractError("tokenize_with_affixes: max_len " +
                        std::to_string(max_len) +
                        " cannot hold the affix frame");
  }
  return finish_sequence(vocab, affix_prefix_ids(kind), text, max_len,
                         Vocabulary::kSepId);
}

std::vector<std::int32_t> affix_prefix_ids(InputKind kind) {
  return {Vocabulary::kClsId,
          kind == InputKind::kQuery ? Vocabulary::kQueryWordId
                                    : Vocabulary::kPassageWordId,
          Vocabulary::kColonId};
}

std::int32_t affix_suffix_id() { return Vocabulary::kSepId; }

}  // namespace xlret
