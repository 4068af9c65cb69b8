// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "xlret/tensor.hpp"

namespace xlret {

// Symmetric in-batch contrastive loss: rows are L2-normalized, logits are
// scaled by 1/temperature, and the cross-entropy of matching row i to row i
// is averaged over both directions. B >= 2 is required (otherwise there are
// no negatives).
template <typename T>
Tensor<T> infonce_loss(const Tensor<T>& query_embs,
                       const Tensor<T>& passage_embs, T temperature);

// MSE(src, tgt) + InfoNCE(src, tgt), weighted 1:1 — pulls parallel
// sentences together while in-batch negatives prevent collapse.
template <typename T>
Tensor<T> align_loss(const Tensor<T>& src_embs, const Tensor<T>& tgt_embs,
                     T temperature);

}  // namespace xlret
