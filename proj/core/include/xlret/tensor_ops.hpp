// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xlret/tensor.hpp"

namespace xlret::ops {

// All operations run in fp32 or fp64, record onto the active tape when any
// input requires a gradient, and are bitwise deterministic. There are no
// strided views; every op materializes its output.

enum class ElementwiseKind { kAdd, kSub, kMul };

// Identifies one dropout site. The realized mask is a pure function of
// (stream, layer, slot) and the element index, so a fixed key yields the
// same mask on every evaluation.
struct DropoutKey {
  std::uint64_t stream = 0;
  std::uint32_t layer = 0;
  std::uint32_t slot = 0;
};

// [m x k] * [k x n] -> [m x n]. Shape mismatches name both operands.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// 2-D transpose; gradient is the transposed output gradient.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

// Elementwise op; b may be broadcast along leading axes (b's shape must be
// a suffix of a's). Gradients for b sum over the broadcast axes.
template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b,
                      ElementwiseKind kind);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, ElementwiseKind::kAdd);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, ElementwiseKind::kSub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, ElementwiseKind::kMul);
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T factor);

// Numerically stable (max-subtracted) softmax along `axis` (negative axes
// count from the end). Each slice sums to 1.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis);

// Normalizes the trailing dimension; gamma/beta are [d].
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps);

// Exact GELU, x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Inverted-scaling dropout. Identity when not training or rate == 0; the
// kept set is a pure function of the key. rate must lie in [0, 1).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, DropoutKey key, bool training);

// Row lookup, [len(ids) x d]; the gradient scatter-adds into the table so
// repeated ids accumulate.
template <typename T>
Tensor<T> embedding_gather(const Tensor<T>& table,
                           const std::vector<std::int32_t>& ids);

// Concatenation along the sequence (row) axis; all parts share the column
// count.
template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

// Concatenation along the feature (column) axis; all parts share the row
// count.
template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts);

// Copies columns [begin, begin + count) of a 2-D tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);

// Stacks 1-D tensors of equal length into a [n x d] matrix.
template <typename T>
Tensor<T> stack_rows(std::span<const Tensor<T>> rows);

// Mean over positions whose mask entry is nonzero; h is [L x d], mask [L].
// Masked positions never touch the output, bitwise. An all-zero mask is a
// degenerate input.
template <typename T>
Tensor<T> masked_mean_pool(const Tensor<T>& h, const Tensor<T>& mask);

// Mean squared error over all elements; gradient is 2 (a - b) / N.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Rows scaled to unit L2 norm; eps stabilizes near-zero rows.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps);

// Main diagonal of a square matrix as a 1-D tensor.
template <typename T>
Tensor<T> diagonal(const Tensor<T>& x);

// {0,1} attention/pooling mask as a constant tensor.
template <typename T>
Tensor<T> mask_tensor(const std::vector<int>& mask);

}  // namespace xlret::ops
