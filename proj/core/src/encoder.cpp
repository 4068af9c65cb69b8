// SPDX-License-Identifier: Apache-2.0
#include "xlret/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xlret/errors.hpp"
#include "xlret/tensor_ops.hpp"

namespace xlret {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kMaskBias = -1e9;

// Dropout slot layout within a layer (see ops::DropoutKey).
enum DropoutSlot : std::uint32_t {
  kSlotResidualAttn = 0,
  kSlotResidualFfn = 1,
  kSlotLoraQ = 2,
  kSlotLoraK = 3,
  kSlotLoraV = 4,
};

template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return ops::add(ops::matmul(x, w), b);
}

// W x + (alpha/r) * B (A x-dropped), all in row-vector convention.
template <typename T>
Tensor<T> lora_projection(const Tensor<T>& x, const Tensor<T>& w,
                          const Tensor<T>& bias,
                          const std::optional<LoraPair<T>>& pair,
                          const LoraConfig& config, std::uint32_t layer,
                          std::uint32_t slot, const ForwardOptions& opts) {
  Tensor<T> base = ops::matmul(x, w);
  if (pair.has_value()) {
    Tensor<T> dropped =
        ops::dropout(x, static_cast<T>(config.dropout_rate),
                     ops::DropoutKey{opts.dropout_stream, layer, slot},
                     opts.training);
    Tensor<T> delta =
        ops::matmul(ops::matmul(dropped, ops::transpose(pair->a)),
                    ops::transpose(pair->b));
    const T scale =
        static_cast<T>(config.alpha / static_cast<double>(config.rank));
    base = ops::add(base, ops::scalar_mul(delta, scale));
  }
  return ops::add(base, bias);
}

}  // namespace

// ==================== configuration ====================

void EncoderConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("encoder: vocab_size must be > 0");
  if (d_model == 0) throw ConfigError("encoder: d_model must be > 0");
  if (num_layers == 0) throw ConfigError("encoder: num_layers must be > 0");
  if (num_heads == 0) throw ConfigError("encoder: num_heads must be > 0");
  if (d_ff == 0) throw ConfigError("encoder: d_ff must be > 0");
  if (max_positions == 0) {
    throw ConfigError("encoder: max_positions must be > 0");
  }
  if (d_model % num_heads != 0) {
    throw ConfigError("encoder: d_model " + std::to_string(d_model) +
                      " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("encoder: dropout_rate must lie in [0, 1)");
  }
}

void LoraConfig::validate() const {
  if (rank == 0) throw ConfigError("lora: rank must be >= 1");
  if (alpha <= 0.0) throw ConfigError("lora: alpha must be > 0");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("lora: dropout_rate must lie in [0, 1)");
  }
}

// ==================== initialization ====================

template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.d_model;
  auto weight = [&rng](std::size_t rows, std::size_t cols) {
    Tensor<T> t = Tensor<T>::random_normal({rows, cols},
                                           static_cast<T>(kInitStd), rng);
    t.set_requires_grad(true);
    return t;
  };
  auto vec = [](std::size_t n, T fill) {
    Tensor<T> t = Tensor<T>::full({n}, fill);
    t.set_requires_grad(true);
    return t;
  };

  EncoderParams<T> p;
  p.config = config;
  p.token_embedding = weight(config.vocab_size, d);
  p.position_embedding = weight(config.max_positions, d);
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    LayerParams<T> layer;
    layer.ln1_gain = vec(d, T(1));
    layer.ln1_bias = vec(d, T(0));
    layer.attn.wq = weight(d, d);
    layer.attn.bq = vec(d, T(0));
    layer.attn.wk = weight(d, d);
    layer.attn.bk = vec(d, T(0));
    layer.attn.wv = weight(d, d);
    layer.attn.bv = vec(d, T(0));
    layer.attn.wo = weight(d, d);
    layer.attn.bo = vec(d, T(0));
    layer.ln2_gain = vec(d, T(1));
    layer.ln2_bias = vec(d, T(0));
    layer.ffn_w1 = weight(d, config.d_ff);
    layer.ffn_b1 = vec(config.d_ff, T(0));
    layer.ffn_w2 = weight(config.d_ff, d);
    layer.ffn_b2 = vec(d, T(0));
    p.layers.push_back(std::move(layer));
  }
  p.final_gain = vec(d, T(1));
  p.final_bias = vec(d, T(0));
  return p;
}

template <typename T>
LoraParams<T> init_lora(const EncoderConfig& encoder_config,
                        const LoraConfig& lora_config, Rng& rng) {
  encoder_config.validate();
  lora_config.validate();
  const std::size_t d = encoder_config.d_model;
  const std::size_t r = lora_config.rank;
  auto make_pair = [&]() {
    LoraPair<T> pair;
    pair.a = Tensor<T>::random_normal({r, d}, static_cast<T>(kInitStd), rng);
    pair.a.set_requires_grad(true);
    pair.b = Tensor<T>::zeros({d, r});
    pair.b.set_requires_grad(true);
    return pair;
  };
  LoraParams<T> p;
  p.config = lora_config;
  for (std::size_t i = 0; i < encoder_config.num_layers; ++i) {
    LoraLayer<T> layer;
    if (lora_config.on_query) layer.q = make_pair();
    if (lora_config.on_key) layer.k = make_pair();
    if (lora_config.on_value) layer.v = make_pair();
    p.layers.push_back(std::move(layer));
  }
  return p;
}

// ==================== forward ====================

template <typename T>
Tensor<T> encoder_forward(const EncoderParams<T>& params,
                          const std::vector<std::int32_t>* token_ids,
                          const Tensor<T>* input_embeddings,
                          const std::vector<int>& attention_mask,
                          const LoraParams<T>* lora,
                          const ForwardOptions& opts) {
  if ((token_ids == nullptr) == (input_embeddings == nullptr)) {
    throw ContractError(
        "encoder_forward: exactly one of token_ids / input_embeddings must "
        "be provided");
  }
  const EncoderConfig& cfg = params.config;
  const std::size_t L =
      token_ids != nullptr ? token_ids->size() : input_embeddings->dim(0);
  if (L == 0) throw ContractError("encoder_forward: empty sequence");
  if (L > cfg.max_positions) {
    throw ContractError("encoder_forward: sequence length " +
                        std::to_string(L) + " exceeds max_positions " +
                        std::to_string(cfg.max_positions));
  }
  if (attention_mask.size() != L) {
    throw ShapeError("encoder_forward: mask length " +
                     std::to_string(attention_mask.size()) +
                     " != sequence length " + std::to_string(L));
  }
  if (input_embeddings != nullptr &&
      (input_embeddings->rank() != 2 ||
       input_embeddings->dim(1) != cfg.d_model)) {
    throw ShapeError("encoder_forward: input embeddings " +
                     shape_to_string(input_embeddings->shape()) +
                     " do not match d_model " + std::to_string(cfg.d_model));
  }
  if (lora != nullptr && lora->layers.size() != cfg.num_layers) {
    throw ShapeError("encoder_forward: lora has " +
                     std::to_string(lora->layers.size()) +
                     " layers, encoder has " + std::to_string(cfg.num_layers));
  }

  // Input representation: token or bypassed embeddings + absolute positions.
  std::vector<std::int32_t> positions(L);
  std::iota(positions.begin(), positions.end(), 0);
  Tensor<T> pos = ops::embedding_gather(params.position_embedding, positions);
  Tensor<T> h =
      token_ids != nullptr
          ? ops::add(ops::embedding_gather(params.token_embedding, *token_ids),
                     pos)
          : ops::add(*input_embeddings, pos);

  // Additive attention bias per key position: 0 kept, -1e9 masked.
  Tensor<T> key_bias = Tensor<T>::zeros({L});
  for (std::size_t i = 0; i < L; ++i) {
    if (attention_mask[i] == 0) key_bias.values()[i] = static_cast<T>(kMaskBias);
  }

  const std::size_t dh = cfg.d_model / cfg.num_heads;
  const T attn_scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T residual_rate = static_cast<T>(cfg.dropout_rate);

  for (std::size_t li = 0; li < cfg.num_layers; ++li) {
    const LayerParams<T>& layer = params.layers[li];
    const LoraLayer<T>* ll = lora != nullptr ? &lora->layers[li] : nullptr;
    const auto layer_id = static_cast<std::uint32_t>(li);

    // --- attention block (pre-norm) ---
    Tensor<T> xn = ops::layernorm(h, layer.ln1_gain, layer.ln1_bias,
                                  static_cast<T>(kLayerNormEps));
    Tensor<T> q, k, v;
    if (ll != nullptr) {
      q = lora_projection(xn, layer.attn.wq, layer.attn.bq, ll->q,
                          lora->config, layer_id, kSlotLoraQ, opts);
      k = lora_projection(xn, layer.attn.wk, layer.attn.bk, ll->k,
                          lora->config, layer_id, kSlotLoraK, opts);
      v = lora_projection(xn, layer.attn.wv, layer.attn.bv, ll->v,
                          lora->config, layer_id, kSlotLoraV, opts);
    } else {
      q = affine(xn, layer.attn.wq, layer.attn.bq);
      k = affine(xn, layer.attn.wk, layer.attn.bk);
      v = affine(xn, layer.attn.wv, layer.attn.bv);
    }

    std::vector<Tensor<T>> head_outputs;
    head_outputs.reserve(cfg.num_heads);
    for (std::size_t head = 0; head < cfg.num_heads; ++head) {
      Tensor<T> qi = ops::slice_cols(q, head * dh, dh);
      Tensor<T> ki = ops::slice_cols(k, head * dh, dh);
      Tensor<T> vi = ops::slice_cols(v, head * dh, dh);
      Tensor<T> scores =
          ops::scalar_mul(ops::matmul(qi, ops::transpose(ki)), attn_scale);
      scores = ops::add(scores, key_bias);  // broadcast over query rows
      Tensor<T> weights = ops::softmax(scores, -1);
      head_outputs.push_back(ops::matmul(weights, vi));
    }
    Tensor<T> ctx = ops::concat_cols(std::span<const Tensor<T>>(head_outputs));
    Tensor<T> attn_out = affine(ctx, layer.attn.wo, layer.attn.bo);
    attn_out = ops::dropout(
        attn_out, residual_rate,
        ops::DropoutKey{opts.dropout_stream, layer_id, kSlotResidualAttn},
        opts.training);
    h = ops::add(h, attn_out);

    // --- feed-forward block (pre-norm) ---
    Tensor<T> xn2 = ops::layernorm(h, layer.ln2_gain, layer.ln2_bias,
                                   static_cast<T>(kLayerNormEps));
    Tensor<T> ffn = affine(
        ops::gelu(affine(xn2, layer.ffn_w1, layer.ffn_b1)), layer.ffn_w2,
        layer.ffn_b2);
    ffn = ops::dropout(
        ffn, residual_rate,
        ops::DropoutKey{opts.dropout_stream, layer_id, kSlotResidualFfn},
        opts.training);
    h = ops::add(h, ffn);
  }

  return ops::layernorm(h, params.final_gain, params.final_bias,
                        static_cast<T>(kLayerNormEps));
}

// ==================== parameter plumbing ====================

namespace {

// Visits every tensor with its checkpoint name, in structural order.
template <typename T, typename P, typename F>
void visit_encoder(P& params, F&& visit) {
  visit("token_embedding", params.token_embedding);
  visit("position_embedding", params.position_embedding);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& layer = params.layers[i];
    const std::string base = "layer." + std::to_string(i) + ".";
    visit(base + "ln1.gain", layer.ln1_gain);
    visit(base + "ln1.bias", layer.ln1_bias);
    visit(base + "attn.wq", layer.attn.wq);
    visit(base + "attn.bq", layer.attn.bq);
    visit(base + "attn.wk", layer.attn.wk);
    visit(base + "attn.bk", layer.attn.bk);
    visit(base + "attn.wv", layer.attn.wv);
    visit(base + "attn.bv", layer.attn.bv);
    visit(base + "attn.wo", layer.attn.wo);
    visit(base + "attn.bo", layer.attn.bo);
    visit(base + "ln2.gain", layer.ln2_gain);
    visit(base + "ln2.bias", layer.ln2_bias);
    visit(base + "ffn.w1", layer.ffn_w1);
    visit(base + "ffn.b1", layer.ffn_b1);
    visit(base + "ffn.w2", layer.ffn_w2);
    visit(base + "ffn.b2", layer.ffn_b2);
  }
  visit("final_ln.gain", params.final_gain);
  visit("final_ln.bias", params.final_bias);
}

template <typename T, typename P, typename F>
void visit_lora(P& params, F&& visit) {
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& layer = params.layers[i];
    const std::string base = "lora.layer." + std::to_string(i) + ".";
    auto visit_pair = [&](const char* target, auto& pair) {
      if (!pair.has_value()) return;
      visit(base + target + ".a", pair->a);
      visit(base + target + ".b", pair->b);
    };
    visit_pair("q", layer.q);
    visit_pair("k", layer.k);
    visit_pair("v", layer.v);
  }
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> named_tensors(const EncoderParams<T>& params) {
  std::vector<NamedTensor<T>> out;
  visit_encoder<T>(params, [&out](const std::string& name, const Tensor<T>& t) {
    out.push_back({name, t});
  });
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> named_tensors(const LoraParams<T>& params) {
  std::vector<NamedTensor<T>> out;
  visit_lora<T>(params, [&out](const std::string& name, const Tensor<T>& t) {
    out.push_back({name, t});
  });
  return out;
}

template <typename T>
void freeze(EncoderParams<T>& params) {
  visit_encoder<T>(params, [](const std::string&, Tensor<T>& t) {
    t.set_requires_grad(false);
  });
}

template <typename T>
void freeze(LoraParams<T>& params) {
  visit_lora<T>(params, [](const std::string&, Tensor<T>& t) {
    t.set_requires_grad(false);
  });
}

template <typename T>
std::vector<NamedTensor<T>> trainable_parameters(
    const std::vector<NamedTensor<T>>& all) {
  std::vector<NamedTensor<T>> out;
  for (const NamedTensor<T>& nt : all) {
    if (nt.tensor.requires_grad()) out.push_back(nt);
  }
  std::sort(out.begin(), out.end(),
            [](const NamedTensor<T>& a, const NamedTensor<T>& b) {
              return a.name < b.name;
            });
  return out;
}

template <typename T>
EncoderParams<T> clone_encoder(const EncoderParams<T>& params) {
  EncoderParams<T> copy;
  copy.config = params.config;
  copy.token_embedding = params.token_embedding.clone();
  copy.position_embedding = params.position_embedding.clone();
  for (const LayerParams<T>& layer : params.layers) {
    LayerParams<T> c;
    c.ln1_gain = layer.ln1_gain.clone();
    c.ln1_bias = layer.ln1_bias.clone();
    c.attn.wq = layer.attn.wq.clone();
    c.attn.bq = layer.attn.bq.clone();
    c.attn.wk = layer.attn.wk.clone();
    c.attn.bk = layer.attn.bk.clone();
    c.attn.wv = layer.attn.wv.clone();
    c.attn.bv = layer.attn.bv.clone();
    c.attn.wo = layer.attn.wo.clone();
    c.attn.bo = layer.attn.bo.clone();
    c.ln2_gain = layer.ln2_gain.clone();
    c.ln2_bias = layer.ln2_bias.clone();
    c.ffn_w1 = layer.ffn_w1.clone();
    c.ffn_b1 = layer.ffn_b1.clone();
    c.ffn_w2 = layer.ffn_w2.clone();
    c.ffn_b2 = layer.ffn_b2.clone();
    copy.layers.push_back(std::move(c));
  }
  copy.final_gain = params.final_gain.clone();
  copy.final_bias = params.final_bias.clone();
  return copy;
}

template <typename T>
LoraParams<T> clone_lora(const LoraParams<T>& params) {
  LoraParams<T> copy;
  copy.config = params.config;
  for (const LoraLayer<T>& layer : params.layers) {
    LoraLayer<T> c;
    auto clone_pair = [](const std::optional<LoraPair<T>>& pair)
        -> std::optional<LoraPair<T>> {
      if (!pair.has_value()) return std::nullopt;
      return LoraPair<T>{pair->a.clone(), pair->b.clone()};
    };
    c.q = clone_pair(layer.q);
    c.k = clone_pair(layer.k);
    c.v = clone_pair(layer.v);
    copy.layers.push_back(std::move(c));
  }
  return copy;
}

// ==================== instantiations ====================

#define XLRET_INSTANTIATE_ENCODER(T)                                         \
  template EncoderParams<T> init_encoder<T>(const EncoderConfig&, Rng&);     \
  template LoraParams<T> init_lora<T>(const EncoderConfig&,                  \
                                      const LoraConfig&, Rng&);              \
  template Tensor<T> encoder_forward<T>(                                     \
      const EncoderParams<T>&, const std::vector<std::int32_t>*,             \
      const Tensor<T>*, const std::vector<int>&, const LoraParams<T>*,       \
      const ForwardOptions&);                                                \
  template std::vector<NamedTensor<T>> named_tensors<T>(                     \
      const EncoderParams<T>&);                                              \
  template std::vector<NamedTensor<T>> named_tensors<T>(const LoraParams<T>&); \
  template void freeze<T>(EncoderParams<T>&);                                \
  template void freeze<T>(LoraParams<T>&);                                   \
  template std::vector<NamedTensor<T>> trainable_parameters<T>(              \
      const std::vector<NamedTensor<T>>&);                                   \
  template EncoderParams<T> clone_encoder<T>(const EncoderParams<T>&);       \
  template LoraParams<T> clone_lora<T>(const LoraParams<T>&);

XLRET_INSTANTIATE_ENCODER(float)
XLRET_INSTANTIATE_ENCODER(double)

#undef XLRET_INSTANTIATE_ENCODER

}  // namespace xlret
