// SPDX-License-Identifier: Apache-2.0
// Transformer encoder: masking causality (bitwise), padding invariance,
// adapter zero-init identity, parameter plumbing, dropout behaviour, and a
// finite-difference check of every parameter class in fp64.
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "xlret/encoder.hpp"
#include "xlret/errors.hpp"
#include "xlret/tensor_ops.hpp"

using namespace xlret;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.vocab_size = 11;
  cfg.d_model = 8;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.d_ff = 16;
  cfg.max_positions = 8;
  cfg.dropout_rate = 0.0;
  return cfg;
}

template <typename T>
bool bitwise_equal(T a, T b) {
  if constexpr (sizeof(T) == 4) {
    return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b);
  } else {
    return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
  }
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.values()[i]) -
                                     static_cast<double>(b.values()[i])));
  }
  return worst;
}

// Deterministic non-symmetric weights so a scalar loss sees every output.
template <typename T>
Tensor<T> probe_weights(const Shape& shape) {
  Tensor<T> w = Tensor<T>::zeros(shape);
  auto v = w.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = static_cast<T>(0.3 + 0.05 * static_cast<double>(i % 11));
  }
  return w;
}

}  // namespace

TEST_CASE("config validation rejects each bad field") {
  EncoderConfig good = tiny_config();
  CHECK_NOTHROW(good.validate());
  auto reject = [](auto mutate) {
    EncoderConfig cfg;
    cfg.vocab_size = 11;
    cfg.d_model = 8;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.d_ff = 16;
    cfg.max_positions = 8;
    mutate(cfg);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  };
  reject([](EncoderConfig& c) { c.vocab_size = 0; });
  reject([](EncoderConfig& c) { c.d_model = 0; });
  reject([](EncoderConfig& c) { c.num_layers = 0; });
  reject([](EncoderConfig& c) { c.num_heads = 0; });
  reject([](EncoderConfig& c) { c.d_ff = 0; });
  reject([](EncoderConfig& c) { c.max_positions = 0; });
  reject([](EncoderConfig& c) { c.num_heads = 3; });  // 8 % 3 != 0
  reject([](EncoderConfig& c) { c.dropout_rate = 1.0; });
  reject([](EncoderConfig& c) { c.dropout_rate = -0.1; });

  LoraConfig lora;
  CHECK_NOTHROW(lora.validate());
  lora.rank = 0;
  CHECK_THROWS_AS(lora.validate(), ConfigError);
  lora = LoraConfig{};
  lora.alpha = 0.0;
  CHECK_THROWS_AS(lora.validate(), ConfigError);
  lora = LoraConfig{};
  lora.dropout_rate = 1.0;
  CHECK_THROWS_AS(lora.validate(), ConfigError);
}

TEST_CASE("initialization is seed-deterministic with documented shapes") {
  Rng r1(42), r2(42), r3(43);
  auto p1 = init_encoder<float>(tiny_config(), r1);
  auto p2 = init_encoder<float>(tiny_config(), r2);
  auto p3 = init_encoder<float>(tiny_config(), r3);

  CHECK(p1.token_embedding.shape() == Shape{11, 8});
  CHECK(p1.position_embedding.shape() == Shape{8, 8});
  REQUIRE(p1.layers.size() == 2);
  CHECK(p1.layers[0].attn.wq.shape() == Shape{8, 8});
  CHECK(p1.layers[0].ffn_w1.shape() == Shape{8, 16});
  CHECK(p1.layers[0].ffn_w2.shape() == Shape{16, 8});
  CHECK(p1.final_gain.values()[0] == 1.0f);
  CHECK(p1.layers[0].attn.bq.values()[0] == 0.0f);

  CHECK(bit_checksum(p1.token_embedding) == bit_checksum(p2.token_embedding));
  CHECK(bit_checksum(p1.token_embedding) != bit_checksum(p3.token_embedding));
  for (const auto& nt : named_tensors(p1)) CHECK(nt.tensor.requires_grad());
}

TEST_CASE("forward is deterministic and masking is bitwise causal") {
  Rng rng(7);
  auto params = init_encoder<float>(tiny_config(), rng);
  std::vector<std::int32_t> ids = {1, 4, 9, 5, 2, 7};
  std::vector<int> mask = {1, 1, 0, 1, 1, 1};

  Tensor<float> out1 = encoder_forward<float>(params, &ids, nullptr, mask);
  Tensor<float> out2 = encoder_forward<float>(params, &ids, nullptr, mask);
  CHECK(bit_checksum(out1) == bit_checksum(out2));
  CHECK(out1.shape() == Shape{6, 8});

  // Change the token at the masked position: every unmasked row must be
  // bit-for-bit unchanged (its attention weight is exactly zero).
  std::vector<std::int32_t> poked = ids;
  poked[2] = 10;
  Tensor<float> out3 = encoder_forward<float>(params, &poked, nullptr, mask);
  bool masked_row_differs = false;
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 8; ++c) {
      const float a = out1.values()[r * 8 + c];
      const float b = out3.values()[r * 8 + c];
      if (r == 2) {
        masked_row_differs = masked_row_differs || !bitwise_equal(a, b);
      } else {
        CHECK(bitwise_equal(a, b));
      }
    }
  }
  CHECK(masked_row_differs);  // the masked row itself does see its own input
}

TEST_CASE("appending masked padding leaves real rows essentially unchanged") {
  Rng rng(8);
  auto params = init_encoder<float>(tiny_config(), rng);
  std::vector<std::int32_t> ids = {3, 6, 1, 8};
  std::vector<int> mask = {1, 1, 1, 1};
  Tensor<float> base = encoder_forward<float>(params, &ids, nullptr, mask);

  std::vector<std::int32_t> padded = {3, 6, 1, 8, 0, 0};
  std::vector<int> padded_mask = {1, 1, 1, 1, 0, 0};
  Tensor<float> with_pad =
      encoder_forward<float>(params, &padded, nullptr, padded_mask);
  double worst = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 8; ++c) {
      worst = std::max(worst,
                       std::abs(static_cast<double>(base.values()[r * 8 + c]) -
                                static_cast<double>(
                                    with_pad.values()[r * 8 + c])));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("zero-initialized adapters are an exact identity") {
  Rng rng(9);
  auto params = init_encoder<float>(tiny_config(), rng);
  LoraConfig lc;
  lc.rank = 2;
  lc.alpha = 4.0;
  lc.dropout_rate = 0.0;
  Rng lora_rng(10);
  auto lora = init_lora<float>(tiny_config(), lc, lora_rng);

  std::vector<std::int32_t> ids = {1, 2, 3, 4, 5};
  std::vector<int> mask(5, 1);
  Tensor<float> without = encoder_forward<float>(params, &ids, nullptr, mask);
  Tensor<float> with =
      encoder_forward<float>(params, &ids, nullptr, mask, &lora);
  CHECK(max_abs_diff(without, with) < 1e-6);

  // Once B is nonzero the adapter must change the output.
  auto vb = lora.layers[0].q->b.values();
  for (std::size_t i = 0; i < vb.size(); ++i) {
    vb[i] = 0.05f * static_cast<float>((i % 5) + 1);
  }
  Tensor<float> adapted =
      encoder_forward<float>(params, &ids, nullptr, mask, &lora);
  CHECK(max_abs_diff(without, adapted) > 1e-6);
}

TEST_CASE("adapter targets can be disabled per projection") {
  LoraConfig lc;
  lc.rank = 2;
  lc.on_key = false;
  Rng rng(3);
  auto lora = init_lora<float>(tiny_config(), lc, rng);
  REQUIRE(lora.layers.size() == 2);
  CHECK(lora.layers[0].q.has_value());
  CHECK(!lora.layers[0].k.has_value());
  CHECK(lora.layers[0].v.has_value());
  for (const auto& nt : named_tensors(lora)) {
    CHECK(nt.name.find(".k.") == std::string::npos);
  }
}

TEST_CASE("named_tensors covers every parameter exactly once") {
  Rng rng(11);
  auto params = init_encoder<float>(tiny_config(), rng);
  auto named = named_tensors(params);
  CHECK(named.size() == 2 * 16 + 4);  // per-layer 16 + embeddings + final ln
  std::set<std::string> names;
  for (const auto& nt : named) CHECK(names.insert(nt.name).second);
  CHECK(names.count("token_embedding") == 1);
  CHECK(names.count("position_embedding") == 1);
  CHECK(names.count("layer.0.attn.wq") == 1);
  CHECK(names.count("layer.1.ffn.b2") == 1);
  CHECK(names.count("final_ln.gain") == 1);

  LoraConfig lc;
  lc.rank = 2;
  Rng lr(12);
  auto lora = init_lora<float>(tiny_config(), lc, lr);
  auto lnamed = named_tensors(lora);
  CHECK(lnamed.size() == 2 * 3 * 2);  // layers x targets x {a, b}
  CHECK(lnamed[0].name == "lora.layer.0.q.a");
  CHECK(lnamed[1].name == "lora.layer.0.q.b");
}

TEST_CASE("freeze clears gradients requirement; trainable set is sorted") {
  Rng rng(13);
  auto params = init_encoder<float>(tiny_config(), rng);
  auto all = named_tensors(params);
  CHECK(trainable_parameters(all).size() == all.size());

  freeze(params);
  CHECK(trainable_parameters(named_tensors(params)).empty());

  // Re-enable two tensors; the trainable list is name-sorted.
  params.token_embedding.set_requires_grad(true);
  params.layers[0].attn.wq.set_requires_grad(true);
  auto trainable = trainable_parameters(named_tensors(params));
  REQUIRE(trainable.size() == 2);
  CHECK(trainable[0].name == "layer.0.attn.wq");
  CHECK(trainable[1].name == "token_embedding");
}

TEST_CASE("clones share values but not storage") {
  Rng rng(14);
  auto params = init_encoder<float>(tiny_config(), rng);
  auto copy = clone_encoder(params);
  CHECK(bit_checksum(copy.token_embedding) ==
        bit_checksum(params.token_embedding));
  copy.token_embedding.values()[0] += 1.0f;
  CHECK(bit_checksum(copy.token_embedding) !=
        bit_checksum(params.token_embedding));

  LoraConfig lc;
  lc.rank = 2;
  Rng lr(15);
  auto lora = init_lora<float>(tiny_config(), lc, lr);
  auto lcopy = clone_lora(lora);
  lcopy.layers[0].q->a.values()[0] += 1.0f;
  CHECK(lcopy.layers[0].q->a.values()[0] != lora.layers[0].q->a.values()[0]);
}

TEST_CASE("residual dropout: training-only, keyed by stream") {
  EncoderConfig cfg = tiny_config();
  cfg.dropout_rate = 0.3;
  Rng rng(16);
  auto params = init_encoder<float>(cfg, rng);
  std::vector<std::int32_t> ids = {1, 2, 3, 4};
  std::vector<int> mask(4, 1);

  Tensor<float> eval1 = encoder_forward<float>(params, &ids, nullptr, mask);
  Tensor<float> eval2 = encoder_forward<float>(params, &ids, nullptr, mask,
                                               nullptr, {.training = false});
  CHECK(bit_checksum(eval1) == bit_checksum(eval2));

  ForwardOptions train{.training = true, .dropout_stream = 5};
  Tensor<float> t1 =
      encoder_forward<float>(params, &ids, nullptr, mask, nullptr, train);
  Tensor<float> t2 =
      encoder_forward<float>(params, &ids, nullptr, mask, nullptr, train);
  CHECK(bit_checksum(t1) == bit_checksum(t2));  // same stream: same draw
  CHECK(bit_checksum(t1) != bit_checksum(eval1));

  ForwardOptions other{.training = true, .dropout_stream = 6};
  Tensor<float> t3 =
      encoder_forward<float>(params, &ids, nullptr, mask, nullptr, other);
  CHECK(bit_checksum(t3) != bit_checksum(t1));
}

TEST_CASE("contract violations fail loudly") {
  Rng rng(17);
  auto params = init_encoder<float>(tiny_config(), rng);
  std::vector<std::int32_t> ids = {1, 2, 3};
  std::vector<int> mask(3, 1);
  Tensor<float> emb = Tensor<float>::zeros({3, 8});

  CHECK_THROWS_AS(encoder_forward<float>(params, nullptr, nullptr, mask),
                  ContractError);
  CHECK_THROWS_AS(encoder_forward<float>(params, &ids, &emb, mask),
                  ContractError);

  std::vector<std::int32_t> empty;
  std::vector<int> empty_mask;
  CHECK_THROWS_AS(encoder_forward<float>(params, &empty, nullptr, empty_mask),
                  ContractError);

  std::vector<std::int32_t> long_ids(9, 1);
  std::vector<int> long_mask(9, 1);
  CHECK_THROWS_AS(encoder_forward<float>(params, &long_ids, nullptr,
                                         long_mask),
                  ContractError);

  std::vector<int> short_mask(2, 1);
  CHECK_THROWS_AS(encoder_forward<float>(params, &ids, nullptr, short_mask),
                  ShapeError);

  Tensor<float> bad_width = Tensor<float>::zeros({3, 5});
  CHECK_THROWS_AS(encoder_forward<float>(params, nullptr, &bad_width, mask),
                  ShapeError);

  std::vector<std::int32_t> oob = {1, 2, 11};  // vocab_size is 11
  CHECK_THROWS_AS(encoder_forward<float>(params, &oob, nullptr, mask),
                  ContractError);

  LoraConfig lc;
  Rng lr(18);
  EncoderConfig one_layer = tiny_config();
  one_layer.num_layers = 1;
  auto mismatched = init_lora<float>(one_layer, lc, lr);
  CHECK_THROWS_AS(encoder_forward<float>(params, &ids, nullptr, mask,
                                         &mismatched),
                  ShapeError);
}

TEST_CASE("analytic gradients match finite differences for every class") {
  EncoderConfig cfg = tiny_config();
  cfg.num_layers = 1;  // one layer exercises every parameter class
  Rng rng(19);
  auto params = init_encoder<double>(cfg, rng);
  LoraConfig lc;
  lc.rank = 2;
  lc.alpha = 4.0;
  Rng lr(20);
  auto lora = init_lora<double>(cfg, lc, lr);
  // Zero B would zero A's gradient; make both sides live.
  for (auto& layer : lora.layers) {
    for (auto* pair : {&layer.q, &layer.k, &layer.v}) {
      auto vb = (*pair)->b.values();
      for (std::size_t i = 0; i < vb.size(); ++i) {
        vb[i] = 0.03 * static_cast<double>((i % 7) + 1);
      }
    }
  }

  std::vector<std::int32_t> ids = {1, 4, 9, 5, 2};
  std::vector<int> mask = {1, 1, 0, 1, 1};  // include a masked position
  Tensor<double> w = probe_weights<double>({5, 8});

  std::vector<Tensor<double>> inputs;
  for (const auto& nt : named_tensors(params)) inputs.push_back(nt.tensor);
  for (const auto& nt : named_tensors(lora)) inputs.push_back(nt.tensor);

  xlret::testing::check_gradients(inputs, [&]() {
    Tensor<double> out =
        encoder_forward<double>(params, &ids, nullptr, mask, &lora);
    return ops::sum(ops::mul(out, w));
  });
}

TEST_CASE("gradients flow through the embeddings bypass") {
  EncoderConfig cfg = tiny_config();
  cfg.num_layers = 1;
  Rng rng(21);
  auto params = init_encoder<double>(cfg, rng);
  freeze(params);

  Rng er(22);
  Tensor<double> emb = Tensor<double>::random_normal({4, 8}, 0.5, er);
  emb.set_requires_grad(true);
  std::vector<int> mask(4, 1);
  Tensor<double> w = probe_weights<double>({4, 8});

  xlret::testing::check_gradients({emb}, [&]() {
    Tensor<double> out = encoder_forward<double>(params, nullptr, &emb, mask);
    return ops::sum(ops::mul(out, w));
  });
}
