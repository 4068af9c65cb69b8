// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xlret/errors.hpp"
#include "xlret/rng.hpp"

namespace xlret {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Flat row-major storage plus an optional gradient buffer of the same size.
// The gradient buffer exists if and only if requires_grad is set.
template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;
  bool requires_grad = false;
};

template <typename T>
class Tape;

// Cheap handle over a shared payload. Copies alias the same storage; clone()
// makes a deep copy. Tensors produced while no tape is active never allocate
// gradients and are safe to share across threads for inference.
template <typename T>
class Tensor {
 public:
  Tensor() : data_(std::make_shared<TensorData<T>>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<T> values,
                            bool requires_grad = false);
  static Tensor scalar(T value);
  static Tensor random_normal(Shape shape, T stddev, Rng& rng,
                              bool requires_grad = false);

  const Shape& shape() const noexcept { return data_->shape; }
  std::size_t rank() const noexcept { return data_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_->values.size(); }
  bool is_scalar() const noexcept { return numel() == 1; }

  std::span<const T> values() const noexcept { return data_->values; }
  std::span<T> values() noexcept { return data_->values; }

  // Scalar extraction; contract error on non-scalar tensors.
  T item() const;

  T at(std::size_t flat_index) const { return data_->values.at(flat_index); }
  T at(std::size_t row, std::size_t col) const;

  bool requires_grad() const noexcept { return data_->requires_grad; }
  // Enabling allocates a zero gradient buffer; disabling releases it.
  void set_requires_grad(bool on);
  // Contract error when no gradient buffer exists.
  std::span<const T> grad() const;
  void zero_grad();

  Tensor clone() const;

  std::shared_ptr<TensorData<T>> payload() const noexcept { return data_; }
  static Tensor wrap(std::shared_ptr<TensorData<T>> payload) {
    return Tensor(std::move(payload));
  }

 private:
  explicit Tensor(std::shared_ptr<TensorData<T>> d) : data_(std::move(d)) {}
  std::shared_ptr<TensorData<T>> data_;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Ordered record of the operations of one forward pass. Operations append
// backward closures in execution order; backward() replays them in exact
// reverse order, which keeps gradient accumulation deterministic. The most
// recently constructed tape on a thread is the active one; ops record onto
// it when any input requires a gradient.
template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Out-of-line so the thread-local slot is only odr-used where it is
  // defined (header-inline access would emit TLS wrappers in every TU,
  // which miscompiles with explicitly instantiated templates).
  static Tape* active() noexcept;

  // `touched` lists every payload whose gradient the closure may write;
  // backward() zeroes those buffers first so repeated invocations are
  // bitwise identical.
  void record(std::function<void()> backward,
              std::vector<std::shared_ptr<TensorData<T>>> touched);

  // Seeds d(loss)/d(loss) = 1 and replays the tape backwards. The loss must
  // be a scalar. Leaves the loss does not reach keep zero gradients.
  void backward(const Tensor<T>& loss);

  std::size_t num_entries() const noexcept { return entries_.size(); }

 private:
  std::vector<std::function<void()>> entries_;
  std::vector<std::shared_ptr<TensorData<T>>> touched_;
  Tape* prev_ = nullptr;
  static thread_local Tape* active_;
};

// FNV-1a over the raw value bits; used for frozen-parameter invariants.
template <typename T>
std::uint64_t bit_checksum(const Tensor<T>& t);

}  // namespace xlret
