// SPDX-License-Identifier: Apache-2.0
#include "xlret/tensor.hpp"

#include <bit>
#include <cstring>
#include <sstream>

namespace xlret {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// ==================== Tensor ====================

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  auto data = std::make_shared<TensorData<T>>();
  data->values.assign(shape_numel(shape), T(0));
  data->shape = std::move(shape);
  Tensor t(std::move(data));
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (T& v : t.values()) v = value;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_values(Shape shape, std::vector<T> values,
                                 bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("from_values: shape " + shape_to_string(shape) +
                     " does not match " + std::to_string(values.size()) +
                     " values");
  }
  auto data = std::make_shared<TensorData<T>>();
  data->shape = std::move(shape);
  data->values = std::move(values);
  Tensor t(std::move(data));
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from_values({1}, {value});
}

template <typename T>
Tensor<T> Tensor<T>::random_normal(Shape shape, T stddev, Rng& rng,
                                   bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (T& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("dim: axis " + std::to_string(axis) +
                     " out of range for " + shape_to_string(shape()));
  }
  return data_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (!is_scalar()) {
    throw ContractError("item: tensor " + shape_to_string(shape()) +
                        " is not a scalar");
  }
  return data_->values[0];
}

template <typename T>
T Tensor<T>::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) {
    throw ShapeError("at(row, col): tensor " + shape_to_string(shape()) +
                     " is not 2-D");
  }
  return data_->values.at(row * dim(1) + col);
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  data_->requires_grad = on;
  if (on) {
    data_->grad.assign(data_->values.size(), T(0));
  } else {
    data_->grad.clear();
    data_->grad.shrink_to_fit();
  }
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!data_->requires_grad) {
    throw ContractError("grad: tensor does not require gradients");
  }
  return data_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(data_->grad.begin(), data_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto data = std::make_shared<TensorData<T>>();
  data->shape = data_->shape;
  data->values = data_->values;
  Tensor t(std::move(data));
  t.set_requires_grad(data_->requires_grad);
  return t;
}

// ==================== Tape ====================

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

template <typename T>
Tape<T>* Tape<T>::active() noexcept {
  return active_;
}

template <typename T>
Tape<T>::Tape() : prev_(active_) {
  active_ = this;
}

template <typename T>
Tape<T>::~Tape() {
  active_ = prev_;
}

template <typename T>
void Tape<T>::record(std::function<void()> backward,
                     std::vector<std::shared_ptr<TensorData<T>>> touched) {
  entries_.push_back(std::move(backward));
  for (auto& p : touched) {
    if (p && p->requires_grad) touched_.push_back(std::move(p));
  }
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.is_scalar()) {
    throw ContractError("backward: loss " + shape_to_string(loss.shape()) +
                        " is not a scalar");
  }
  for (auto& p : touched_) {
    std::fill(p->grad.begin(), p->grad.end(), T(0));
  }
  if (!loss.requires_grad()) {
    // Nothing on the tape reaches the loss; every leaf keeps zero gradient.
    return;
  }
  loss.payload()->grad[0] = T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    (*it)();
  }
}

template <typename T>
std::uint64_t bit_checksum(const Tensor<T>& t) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (T v : t.values()) {
    if constexpr (sizeof(T) == 4) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
      for (int s = 0; s < 32; s += 8) {
        h = (h ^ ((bits >> s) & 0xffu)) * 0x100000001b3ull;
      }
    } else {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int s = 0; s < 64; s += 8) {
        h = (h ^ ((bits >> s) & 0xffu)) * 0x100000001b3ull;
      }
    }
  }
  return h;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template std::uint64_t bit_checksum<float>(const Tensor<float>&);
template std::uint64_t bit_checksum<double>(const Tensor<double>&);

}  // namespace xlret
