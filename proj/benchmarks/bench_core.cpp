// SPDX-License-Identifier: Apache-2.0
// Microbenchmarks for the hot paths of the training loop: encoder forward,
// forward+backward, and the pooled-embedding distillation step.
#include <benchmark/benchmark.h>

#include "xlret/encoder.hpp"
#include "xlret/rng.hpp"
#include "xlret/tensor_ops.hpp"

namespace {

using namespace xlret;

EncoderParams<float> make_params(std::size_t seq_len) {
  EncoderConfig cfg;
  cfg.vocab_size = 2048;
  cfg.max_positions = seq_len;
  Rng rng(7);
  return init_encoder<float>(cfg, rng);
}

std::vector<std::int32_t> make_ids(std::size_t seq_len) {
  Rng rng(11);
  std::vector<std::int32_t> ids(seq_len);
  for (auto& id : ids) {
    id = static_cast<std::int32_t>(rng.uniform_index(2048));
  }
  return ids;
}

void BM_EncoderForward(benchmark::State& state) {
  const auto seq_len = static_cast<std::size_t>(state.range(0));
  const EncoderParams<float> params = make_params(seq_len);
  const auto ids = make_ids(seq_len);
  const std::vector<int> mask(seq_len, 1);
  for (auto _ : state) {
    Tensor<float> h = encoder_forward<float>(params, &ids, nullptr, mask);
    benchmark::DoNotOptimize(h.values().data());
  }
}
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(64)->Arg(128);

void BM_EncoderForwardBackward(benchmark::State& state) {
  const auto seq_len = static_cast<std::size_t>(state.range(0));
  const EncoderParams<float> params = make_params(seq_len);
  const auto ids = make_ids(seq_len);
  const std::vector<int> mask(seq_len, 1);
  for (auto _ : state) {
    Tape<float> tape;
    Tensor<float> h = encoder_forward<float>(params, &ids, nullptr, mask);
    Tensor<float> pooled = ops::masked_mean_pool(h, ops::mask_tensor<float>(mask));
    Tensor<float> loss = ops::mean(pooled);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.values().data());
  }
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(16)->Arg(64)->Arg(128);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  Tensor<float> a = Tensor<float>::random_normal({n, n}, 1.0f, rng);
  Tensor<float> b = Tensor<float>::random_normal({n, n}, 1.0f, rng);
  for (auto _ : state) {
    Tensor<float> c = ops::matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
