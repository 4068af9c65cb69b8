// SPDX-License-Identifier: Apache-2.0
#include "xlret/optimizer.hpp"

#include <cmath>

#include "xlret/errors.hpp"

namespace xlret {

double LrSchedule::lr_at(std::size_t step) const {
  if (kind == Kind::kConstant) return base_lr;
  if (total_steps == 0) throw ConfigError("lr schedule: total_steps = 0");
  if (step >= total_steps) return 0.0;
  return base_lr * (1.0 - static_cast<double>(step) /
                              static_cast<double>(total_steps));
}

template <typename T>
AdamOptimizer<T>::AdamOptimizer(std::vector<NamedTensor<T>> params,
                                AdamConfig config)
    : config_(config) {
  slots_.reserve(params.size());
  for (NamedTensor<T>& p : params) {
    if (!p.tensor.requires_grad()) {
      throw ContractError("optimizer: parameter '" + p.name +
                          "' does not require gradients");
    }
    Slot slot;
    slot.m.assign(p.tensor.numel(), T(0));
    slot.v.assign(p.tensor.numel(), T(0));
    slot.param = std::move(p);
    slots_.push_back(std::move(slot));
  }
}

template <typename T>
void AdamOptimizer<T>::step(T lr) {
  ++t_;
  const T beta1 = static_cast<T>(config_.beta1);
  const T beta2 = static_cast<T>(config_.beta2);
  const T eps = static_cast<T>(config_.eps);
  const T correction1 =
      T(1) - static_cast<T>(std::pow(config_.beta1, static_cast<double>(t_)));
  const T correction2 =
      T(1) - static_cast<T>(std::pow(config_.beta2, static_cast<double>(t_)));
  for (Slot& slot : slots_) {
    auto values = slot.param.tensor.values();
    auto grads = slot.param.tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T g = grads[i];
      if (!std::isfinite(g)) {
        throw DivergenceError("optimizer: non-finite gradient in '" +
                              slot.param.name + "'");
      }
      slot.m[i] = beta1 * slot.m[i] + (T(1) - beta1) * g;
      slot.v[i] = beta2 * slot.v[i] + (T(1) - beta2) * g * g;
      const T m_hat = slot.m[i] / correction1;
      const T v_hat = slot.v[i] / correction2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
void AdamOptimizer<T>::zero_grad() {
  for (Slot& slot : slots_) slot.param.tensor.zero_grad();
}

template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

}  // namespace xlret
