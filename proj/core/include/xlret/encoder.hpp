// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xlret/rng.hpp"
#include "xlret/tensor.hpp"

namespace xlret {

inline constexpr double kLayerNormEps = 1e-5;

// ==================== configuration ====================

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_positions = 512;
  double dropout_rate = 0.0;  // residual dropout, training mode only

  // Throws ConfigError on non-positive fields or indivisible head width.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

struct LoraConfig {
  std::size_t rank = 32;
  double alpha = 64.0;
  double dropout_rate = 0.05;
  bool on_query = true;
  bool on_key = true;
  bool on_value = true;

  void validate() const;

  bool operator==(const LoraConfig&) const = default;
};

// ==================== parameters ====================

template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;  // weights [d_in x d_out]
};

template <typename T>
struct LayerParams {
  Tensor<T> ln1_gain, ln1_bias;
  AttentionParams<T> attn;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  Tensor<T> token_embedding;     // [vocab x d_model]
  Tensor<T> position_embedding;  // [max_positions x d_model]
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_gain, final_bias;
};

// Low-rank adapter pair: delta(x) = (alpha/rank) * (x A^T) B^T.
template <typename T>
struct LoraPair {
  Tensor<T> a;  // [rank x d_model], small Gaussian init
  Tensor<T> b;  // [d_model x rank], zero init
};

template <typename T>
struct LoraLayer {
  std::optional<LoraPair<T>> q, k, v;
};

template <typename T>
struct LoraParams {
  LoraConfig config;
  std::vector<LoraLayer<T>> layers;  // one entry per encoder layer
};

// Fresh parameters, all requiring gradients. Weights and embeddings are
// N(0, 0.02); biases and layernorm biases zero; layernorm gains one.
template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& config, Rng& rng);

// A rows are N(0, 0.02); B rows are zero, so the adapter starts as an
// exact identity on the base projection.
template <typename T>
LoraParams<T> init_lora(const EncoderConfig& encoder_config,
                        const LoraConfig& lora_config, Rng& rng);

// ==================== forward ====================

struct ForwardOptions {
  bool training = false;          // enables dropout
  std::uint64_t dropout_stream = 0;  // per-step stream for dropout keys
};

// Pre-norm transformer encoding of one sequence.
// Exactly one of `token_ids` / `input_embeddings` must be non-null: ids go
// through the token-embedding table, embeddings bypass it. Learned absolute
// position rows are added in both cases. Masked positions (mask[i] == 0)
// receive a -1e9 additive attention bias from every query, which underflows
// to exactly zero attention weight; their own outputs are computed but
// carry no information into unmasked positions.
template <typename T>
Tensor<T> encoder_forward(const EncoderParams<T>& params,
                          const std::vector<std::int32_t>* token_ids,
                          const Tensor<T>* input_embeddings,
                          const std::vector<int>& attention_mask,
                          const LoraParams<T>* lora = nullptr,
                          const ForwardOptions& opts = {});

// ==================== parameter plumbing ====================

template <typename T>
std::vector<NamedTensor<T>> named_tensors(const EncoderParams<T>& params);

// Names carry the "lora." prefix: lora.layer.<i>.<target>.<a|b>.
template <typename T>
std::vector<NamedTensor<T>> named_tensors(const LoraParams<T>& params);

// Clears requires_grad on every contained tensor.
template <typename T>
void freeze(EncoderParams<T>& params);
template <typename T>
void freeze(LoraParams<T>& params);

// Name-sorted subset of `all` that still requires gradients.
template <typename T>
std::vector<NamedTensor<T>> trainable_parameters(
    const std::vector<NamedTensor<T>>& all);

template <typename T>
EncoderParams<T> clone_encoder(const EncoderParams<T>& params);
template <typename T>
LoraParams<T> clone_lora(const LoraParams<T>& params);

}  // namespace xlret
