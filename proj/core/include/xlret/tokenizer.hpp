// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace xlret {

// Whether a text enters the retrieval models as a query or as a passage.
// The two roles get different affix words so the encoder can specialize.
enum class InputKind { kQuery, kPassage };

// Token ids plus a parallel attention mask (1 = attended, 0 = ignored).
struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::vector<int> mask;

  std::size_t size() const { return ids.size(); }
};

// Word-level vocabulary with a pinned block of reserved tokens at the front,
// optionally followed by one [LANG_<k>] tag per registered language.
// Reserved ids are identical across every vocabulary built by this library,
// which lets two models with different word inventories agree on the ids of
// structural tokens ([CLS], [SEP], "query", "passage", ":").
class Vocabulary {
 public:
  static constexpr std::int32_t kPadId = 0;
  static constexpr std::int32_t kBosId = 1;
  static constexpr std::int32_t kEosId = 2;
  static constexpr std::int32_t kClsId = 3;
  static constexpr std::int32_t kSepId = 4;
  static constexpr std::int32_t kUnkId = 5;
  static constexpr std::int32_t kQueryWordId = 6;
  static constexpr std::int32_t kPassageWordId = 7;
  static constexpr std::int32_t kColonId = 8;

  Vocabulary() = default;

  // The fixed reserved block, in id order.
  static const std::vector<std::string>& reserved_tokens();

  // Surface form of the language tag for `lang_id` ("[LANG_0]", ...).
  static std::string lang_tag(std::size_t lang_id);

  // Counts lowercased words across `texts` and keeps those with
  // count >= min_count, ordered by (count desc, lexicographic asc) after the
  // reserved block and the language tags. Empty corpus is a data error.
  static Vocabulary build(const std::vector<std::string>& texts,
                          std::size_t min_count, std::size_t num_languages);

  // Reserved block + language tags + the given words in the given order
  // (duplicates and reserved collisions dropped).
  static Vocabulary from_words(const std::vector<std::string>& words,
                               std::size_t num_languages = 0);

  std::size_t size() const { return tokens_.size(); }
  std::size_t num_languages() const { return num_languages_; }

  // Id of `token`, or kUnkId when the token is unknown.
  std::int32_t id_of(const std::string& token) const;

  // Id of the [LANG_<k>] tag; unregistered lang_id is a configuration error.
  std::int32_t lang_tag_id(std::size_t lang_id) const;

  bool contains(const std::string& token) const;

  // Surface form of `id`; throws ContractError when out of range.
  const std::string& token_of(std::int32_t id) const;

  // One token per line, line number = id.
  void save(const std::filesystem::path& file) const;
  static Vocabulary load(const std::filesystem::path& file);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::size_t num_languages_ = 0;

  void rebuild_index();
};

// Lowercases and splits on every character outside [a-z0-9_].
std::vector<std::string> split_words(const std::string& text);

// [BOS] [LANG_<k>] w1 ... wn [EOS], truncated so the result never exceeds
// max_len: the leading tokens are cut to max_len - 1 and the end token is
// appended. Long input truncates, it never throws. Mask is all ones.
// max_len < 3 is a contract error (no room for the frame).
TokenSequence tokenize_multilingual(const Vocabulary& vocab,
                                    const std::string& text,
                                    std::size_t lang_id, std::size_t max_len);

// [CLS] <kind-word> : w1 ... wn [SEP] with the same truncation rule.
// max_len < 3 is a contract error.
TokenSequence tokenize_with_affixes(const Vocabulary& vocab,
                                    const std::string& text, InputKind kind,
                                    std::size_t max_len);

// The three ids prepended for `kind` ([CLS], kind word, ":").
std::vector<std::int32_t> affix_prefix_ids(InputKind kind);

// The single id appended after the payload ([SEP]).
std::int32_t affix_suffix_id();

}  // namespace xlret
