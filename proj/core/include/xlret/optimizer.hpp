// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xlret/tensor.hpp"

namespace xlret {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Learning-rate schedule; linear decay runs from base_lr at step 0 to
// exactly 0 at step total_steps.
struct LrSchedule {
  enum class Kind { kConstant, kLinearDecay };

  Kind kind = Kind::kLinearDecay;
  double base_lr = 2e-4;
  std::size_t total_steps = 1;

  double lr_at(std::size_t step) const;
};

// Bias-corrected Adam over a fixed parameter list. Every parameter must
// require gradients at construction (frozen tensors are the caller's to
// exclude). step() reads the gradient buffers in place; a non-finite
// gradient aborts with the parameter's name.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<NamedTensor<T>> params, AdamConfig config = {});

  void step(T lr);
  void zero_grad();
  std::size_t step_count() const { return t_; }
  std::size_t num_parameters() const { return slots_.size(); }

 private:
  struct Slot {
    NamedTensor<T> param;
    std::vector<T> m;
    std::vector<T> v;
  };
  std::vector<Slot> slots_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

}  // namespace xlret
