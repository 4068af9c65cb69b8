// SPDX-License-Identifier: Apache-2.0
#include "xlret/composition.hpp"

#include "xlret/errors.hpp"
#include "xlret/tensor_ops.hpp"

namespace xlret {

namespace {
constexpr double kInitStd = 0.02;
constexpr std::size_t kAffixPositions = 4;  // [CLS], kind word, ":", [SEP]
}  // namespace

// ==================== projection ====================

template <typename T>
ProjectionParams<T> init_projection(std::size_t d_enc, std::size_t d_hidden,
                                    std::size_t d_retriever, bool use_gelu,
                                    Rng& rng) {
  if (d_enc == 0 || d_hidden == 0 || d_retriever == 0) {
    throw ConfigError("projection: all widths must be > 0");
  }
  ProjectionParams<T> p;
  p.use_gelu = use_gelu;
  p.up_w = Tensor<T>::random_normal({d_enc, d_hidden},
                                    static_cast<T>(kInitStd), rng);
  p.up_b = Tensor<T>::zeros({d_hidden});
  p.down_w = Tensor<T>::random_normal({d_hidden, d_retriever},
                                      static_cast<T>(kInitStd), rng);
  p.down_b = Tensor<T>::zeros({d_retriever});
  p.up_w.set_requires_grad(true);
  p.up_b.set_requires_grad(true);
  p.down_w.set_requires_grad(true);
  p.down_b.set_requires_grad(true);
  return p;
}

template <typename T>
Tensor<T> project(const Tensor<T>& hidden, const ProjectionParams<T>& params) {
  if (hidden.rank() != 2 || hidden.dim(1) != params.up_w.dim(0)) {
    throw ShapeError("project: input " + shape_to_string(hidden.shape()) +
                     " does not match projection input width " +
                     std::to_string(params.up_w.dim(0)));
  }
  Tensor<T> up = ops::add(ops::matmul(hidden, params.up_w), params.up_b);
  if (params.use_gelu) up = ops::gelu(up);
  return ops::add(ops::matmul(up, params.down_w), params.down_b);
}

template <typename T>
std::vector<NamedTensor<T>> named_tensors(const ProjectionParams<T>& params) {
  return {{"projection.up.w", params.up_w},
          {"projection.up.b", params.up_b},
          {"projection.down.w", params.down_w},
          {"projection.down.b", params.down_b}};
}

template <typename T>
void freeze(ProjectionParams<T>& params) {
  params.up_w.set_requires_grad(false);
  params.up_b.set_requires_grad(false);
  params.down_w.set_requires_grad(false);
  params.down_b.set_requires_grad(false);
}

template <typename T>
ProjectionParams<T> clone_projection(const ProjectionParams<T>& params) {
  ProjectionParams<T> copy;
  copy.use_gelu = params.use_gelu;
  copy.up_w = params.up_w.clone();
  copy.up_b = params.up_b.clone();
  copy.down_w = params.down_w.clone();
  copy.down_b = params.down_b.clone();
  return copy;
}

// ==================== teacher ====================

template <typename T>
Tensor<T> teacher_embed(const TeacherModel<T>& teacher, const std::string& text,
                        InputKind kind, const ForwardOptions& opts) {
  const TokenSequence seq = tokenize_with_affixes(
      teacher.vocab, text, kind, teacher.encoder.config.max_positions);
  Tensor<T> h = encoder_forward<T>(teacher.encoder, &seq.ids, nullptr,
                                   seq.mask, nullptr, opts);
  return ops::masked_mean_pool(h, ops::mask_tensor<T>(seq.mask));
}

// ==================== composed student ====================

template <typename T>
ComposedStudent<T> assemble_student(Vocabulary multilingual_vocab,
                                    EncoderParams<T> multilingual,
                                    Vocabulary head_vocab,
                                    EncoderParams<T> head,
                                    ProjectionParams<T> projection,
                                    LoraParams<T> lora) {
  if (projection.up_w.dim(0) != multilingual.config.d_model) {
    throw ConfigError("assemble_student: projection input width " +
                      std::to_string(projection.up_w.dim(0)) +
                      " != multilingual d_model " +
                      std::to_string(multilingual.config.d_model));
  }
  if (projection.down_w.dim(1) != head.config.d_model) {
    throw ConfigError("assemble_student: projection output width " +
                      std::to_string(projection.down_w.dim(1)) +
                      " != retrieval head d_model " +
                      std::to_string(head.config.d_model));
  }
  if (lora.layers.size() != head.config.num_layers) {
    throw ConfigError("assemble_student: lora covers " +
                      std::to_string(lora.layers.size()) +
                      " layers, head has " +
                      std::to_string(head.config.num_layers));
  }
  if (head.config.max_positions <= kAffixPositions) {
    throw ConfigError(
        "assemble_student: head max_positions leaves no room after affix "
        "injection");
  }
  freeze(multilingual);
  freeze(head);
  ComposedStudent<T> s;
  s.multilingual_vocab = std::move(multilingual_vocab);
  s.head_vocab = std::move(head_vocab);
  s.multilingual = std::move(multilingual);
  s.projection = std::move(projection);
  s.head = std::move(head);
  s.lora = std::move(lora);
  return s;
}

template <typename T>
std::size_t student_budget(const ComposedStudent<T>& student) {
  return student.head.config.max_positions - kAffixPositions;
}

std::vector<int> edit_mask(const TokenSequence& seq) {
  if (seq.ids.empty() || seq.ids.front() != Vocabulary::kBosId ||
      seq.ids.back() != Vocabulary::kEosId) {
    throw ContractError(
        "edit_mask: sequence does not carry the [BOS] ... [EOS] frame");
  }
  std::vector<int> edited = seq.mask;
  edited.front() = 0;
  edited.back() = 0;
  return edited;
}

template <typename T>
AffixEmbeddings<T> fetch_affix_embeddings(const EncoderParams<T>& head,
                                          InputKind kind) {
  AffixEmbeddings<T> affix;
  affix.prefix =
      ops::embedding_gather(head.token_embedding, affix_prefix_ids(kind));
  affix.suffix = ops::embedding_gather(head.token_embedding,
                                       {affix_suffix_id()});
  return affix;
}

template <typename T>
MultilingualEncoding<T> encode_multilingual(const ComposedStudent<T>& student,
                                            const std::string& text,
                                            std::size_t lang_id,
                                            const ForwardOptions& opts) {
  const std::size_t budget =
      std::min(student_budget(student),
               student.multilingual.config.max_positions);
  MultilingualEncoding<T> enc;
  enc.seq =
      tokenize_multilingual(student.multilingual_vocab, text, lang_id, budget);
  enc.hidden = encoder_forward<T>(student.multilingual, &enc.seq.ids, nullptr,
                                  enc.seq.mask, nullptr, opts);
  return enc;
}

template <typename T>
Tensor<T> student_embed_encoded(const ComposedStudent<T>& student,
                                const MultilingualEncoding<T>& encoding,
                                InputKind kind, const ForwardOptions& opts) {
  Tensor<T> projected = project(encoding.hidden, student.projection);
  const std::vector<int> edited = edit_mask(encoding.seq);

  const AffixEmbeddings<T> affix =
      fetch_affix_embeddings(student.head, kind);
  const Tensor<T> parts[] = {affix.prefix, projected, affix.suffix};
  Tensor<T> composed = ops::concat_rows(std::span<const Tensor<T>>(parts));

  std::vector<int> full_mask;
  full_mask.reserve(edited.size() + kAffixPositions);
  full_mask.insert(full_mask.end(), affix.prefix.dim(0), 1);
  full_mask.insert(full_mask.end(), edited.begin(), edited.end());
  full_mask.push_back(1);

  if (composed.dim(0) > student.head.config.max_positions) {
    throw ContractError("student_embed: composed length " +
                        std::to_string(composed.dim(0)) +
                        " exceeds head max_positions " +
                        std::to_string(student.head.config.max_positions) +
                        " (budget arithmetic bug)");
  }

  Tensor<T> h = encoder_forward<T>(student.head, nullptr, &composed, full_mask,
                                   &student.lora, opts);
  return ops::masked_mean_pool(h, ops::mask_tensor<T>(full_mask));
}

template <typename T>
Tensor<T> student_embed(const ComposedStudent<T>& student,
                        const std::string& text, std::size_t lang_id,
                        InputKind kind, const ForwardOptions& opts) {
  return student_embed_encoded(
      student, encode_multilingual(student, text, lang_id, opts), kind, opts);
}

template <typename T>
std::vector<NamedTensor<T>> named_tensors(const ComposedStudent<T>& student) {
  std::vector<NamedTensor<T>> out;
  for (NamedTensor<T>& nt : named_tensors(student.multilingual)) {
    out.push_back({"multilingual." + nt.name, nt.tensor});
  }
  for (NamedTensor<T>& nt : named_tensors(student.projection)) {
    out.push_back(std::move(nt));  // already prefixed "projection."
  }
  for (NamedTensor<T>& nt : named_tensors(student.head)) {
    out.push_back({"head." + nt.name, nt.tensor});
  }
  for (NamedTensor<T>& nt : named_tensors(student.lora)) {
    out.push_back(std::move(nt));  // already prefixed "lora."
  }
  return out;
}

// ==================== instantiations ====================

#define XLRET_INSTANTIATE_COMPOSITION(T)                                       \
  template ProjectionParams<T> init_projection<T>(std::size_t, std::size_t,    \
                                                  std::size_t, bool, Rng&);    \
  template Tensor<T> project<T>(const Tensor<T>&, const ProjectionParams<T>&); \
  template std::vector<NamedTensor<T>> named_tensors<T>(                       \
      const ProjectionParams<T>&);                                             \
  template void freeze<T>(ProjectionParams<T>&);                               \
  template ProjectionParams<T> clone_projection<T>(                            \
      const ProjectionParams<T>&);                                             \
  template Tensor<T> teacher_embed<T>(const TeacherModel<T>&,                  \
                                      const std::string&, InputKind,           \
                                      const ForwardOptions&);                  \
  template ComposedStudent<T> assemble_student<T>(                             \
      Vocabulary, EncoderParams<T>, Vocabulary, EncoderParams<T>,              \
      ProjectionParams<T>, LoraParams<T>);                                     \
  template std::size_t student_budget<T>(const ComposedStudent<T>&);           \
  template AffixEmbeddings<T> fetch_affix_embeddings<T>(                       \
      const EncoderParams<T>&, InputKind);                                     \
  template MultilingualEncoding<T> encode_multilingual<T>(                     \
      const ComposedStudent<T>&, const std::string&, std::size_t,              \
      const ForwardOptions&);                                                  \
  template Tensor<T> student_embed_encoded<T>(                                 \
      const ComposedStudent<T>&, const MultilingualEncoding<T>&, InputKind,    \
      const ForwardOptions&);                                                  \
  template Tensor<T> student_embed<T>(const ComposedStudent<T>&,               \
                                      const std::string&, std::size_t,         \
                                      InputKind, const ForwardOptions&);       \
  template std::vector<NamedTensor<T>> named_tensors<T>(                       \
      const ComposedStudent<T>&);

XLRET_INSTANTIATE_COMPOSITION(float)
XLRET_INSTANTIATE_COMPOSITION(double)

#undef XLRET_INSTANTIATE_COMPOSITION

}  // namespace xlret
