// SPDX-License-Identifier: Apache-2.0
#include "xlret/losses.hpp"

#include "xlret/errors.hpp"
#include "xlret/tensor_ops.hpp"

namespace xlret {

template <typename T>
Tensor<T> infonce_loss(const Tensor<T>& query_embs,
                       const Tensor<T>& passage_embs, T temperature) {
  if (query_embs.rank() != 2 || passage_embs.rank() != 2 ||
      query_embs.shape() != passage_embs.shape()) {
    throw ShapeError("infonce_loss: expected matching [B x d] inputs, got " +
                     shape_to_string(query_embs.shape()) + " and " +
                     shape_to_string(passage_embs.shape()));
  }
  if (query_embs.dim(0) < 2) {
    throw ContractError("infonce_loss: batch of " +
                        std::to_string(query_embs.dim(0)) +
                        " has no in-batch negatives");
  }
  if (!(temperature > T(0))) {
    throw ContractError("infonce_loss: temperature must be > 0");
  }
  Tensor<T> qn = ops::l2_normalize_rows(query_embs, static_cast<T>(1e-12));
  Tensor<T> pn = ops::l2_normalize_rows(passage_embs, static_cast<T>(1e-12));
  Tensor<T> logits = ops::scalar_mul(ops::matmul(qn, ops::transpose(pn)),
                                     T(1) / temperature);
  // Row direction matches query i to passage i; column direction the reverse.
  Tensor<T> row_ll = ops::mean(ops::diagonal(ops::log_softmax(logits, 1)));
  Tensor<T> col_ll = ops::mean(ops::diagonal(ops::log_softmax(logits, 0)));
  return ops::scalar_mul(ops::add(row_ll, col_ll), T(-0.5));
}

template <typename T>
Tensor<T> align_loss(const Tensor<T>& src_embs, const Tensor<T>& tgt_embs,
                     T temperature) {
  return ops::add(ops::mse(src_embs, tgt_embs),
                  infonce_loss(src_embs, tgt_embs, temperature));
}

template Tensor<float> infonce_loss<float>(const Tensor<float>&,
                                           const Tensor<float>&, float);
template Tensor<double> infonce_loss<double>(const Tensor<double>&,
                                             const Tensor<double>&, double);
template Tensor<float> align_loss<float>(const Tensor<float>&,
                                         const Tensor<float>&, float);
template Tensor<double> align_loss<double>(const Tensor<double>&,
                                           const Tensor<double>&, double);

}  // namespace xlret
