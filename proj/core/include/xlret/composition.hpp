// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "xlret/encoder.hpp"
#include "xlret/tokenizer.hpp"

namespace xlret {

// ==================== projection ====================

// Position-wise two-stage affine map d_enc -> d_hidden -> d_retriever,
// optionally with a GELU between the stages (off by default: the map the
// student trains is purely linear unless the ablation flag is set).
template <typename T>
struct ProjectionParams {
  Tensor<T> up_w;    // [d_enc x d_hidden]
  Tensor<T> up_b;    // [d_hidden]
  Tensor<T> down_w;  // [d_hidden x d_retriever]
  Tensor<T> down_b;  // [d_retriever]
  bool use_gelu = false;
};

template <typename T>
ProjectionParams<T> init_projection(std::size_t d_enc, std::size_t d_hidden,
                                    std::size_t d_retriever, bool use_gelu,
                                    Rng& rng);

template <typename T>
Tensor<T> project(const Tensor<T>& hidden, const ProjectionParams<T>& params);

// Names carry the "projection." prefix: projection.<up|down>.<w|b>.
template <typename T>
std::vector<NamedTensor<T>> named_tensors(const ProjectionParams<T>& params);

template <typename T>
void freeze(ProjectionParams<T>& params);

template <typename T>
ProjectionParams<T> clone_projection(const ProjectionParams<T>& params);

// ==================== teacher ====================

// Monolingual retrieval encoder: the distillation target.
template <typename T>
struct TeacherModel {
  Vocabulary vocab;
  EncoderParams<T> encoder;
};

// [CLS] <kind> : words [SEP] -> encoder -> mean pool over all positions.
template <typename T>
Tensor<T> teacher_embed(const TeacherModel<T>& teacher, const std::string& text,
                        InputKind kind, const ForwardOptions& opts = {});

// ==================== composed student ====================

// Frozen multilingual encoder -> trainable projection -> mask surgery ->
// affix-embedding injection -> frozen retrieval head with trainable LoRA ->
// masked mean pooling. Only projection and LoRA tensors require gradients.
template <typename T>
struct ComposedStudent {
  Vocabulary multilingual_vocab;
  Vocabulary head_vocab;
  EncoderParams<T> multilingual;
  ProjectionParams<T> projection;
  EncoderParams<T> head;
  LoraParams<T> lora;
};

// Takes ownership of the parts, freezes both encoders, and validates that
// the projection bridges multilingual d_model to head d_model.
template <typename T>
ComposedStudent<T> assemble_student(Vocabulary multilingual_vocab,
                                    EncoderParams<T> multilingual,
                                    Vocabulary head_vocab,
                                    EncoderParams<T> head,
                                    ProjectionParams<T> projection,
                                    LoraParams<T> lora);

// Token budget for the multilingual sequence: head max_positions minus the
// 4 injected affix positions ([CLS], kind word, ":", [SEP]).
template <typename T>
std::size_t student_budget(const ComposedStudent<T>& student);

// Zeroes the mask at the [BOS] and final [EOS] positions; every other entry
// is preserved. The sequence must carry that frame (contract error if not).
std::vector<int> edit_mask(const TokenSequence& seq);

// Affix rows fetched from the retrieval head's embedding table.
template <typename T>
struct AffixEmbeddings {
  Tensor<T> prefix;  // [3 x d]: [CLS], kind word, ":"
  Tensor<T> suffix;  // [1 x d]: [SEP]
};

template <typename T>
AffixEmbeddings<T> fetch_affix_embeddings(const EncoderParams<T>& head,
                                          InputKind kind);

// Frozen multilingual pass over one text, reusable across training steps.
template <typename T>
struct MultilingualEncoding {
  TokenSequence seq;
  Tensor<T> hidden;  // [L x d_enc]
};

template <typename T>
MultilingualEncoding<T> encode_multilingual(const ComposedStudent<T>& student,
                                            const std::string& text,
                                            std::size_t lang_id,
                                            const ForwardOptions& opts = {});

// Projection + mask surgery + affix injection + retrieval head + pooling,
// starting from a cached multilingual encoding.
template <typename T>
Tensor<T> student_embed_encoded(const ComposedStudent<T>& student,
                                const MultilingualEncoding<T>& encoding,
                                InputKind kind,
                                const ForwardOptions& opts = {});

// Full student pipeline from raw text.
template <typename T>
Tensor<T> student_embed(const ComposedStudent<T>& student,
                        const std::string& text, std::size_t lang_id,
                        InputKind kind, const ForwardOptions& opts = {});

// Every tensor of the student under stable prefixes: multilingual.*,
// projection.*, head.*, lora.*.
template <typename T>
std::vector<NamedTensor<T>> named_tensors(const ComposedStudent<T>& student);

}  // namespace xlret
