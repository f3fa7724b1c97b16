#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

/// SGD with classical momentum and L2 weight decay:
///   g <- grad + weight_decay * w;  v <- momentum * v + g;  w <- w - lr * v
template <typename T>
struct SgdState {
  T learning_rate = T(0.01);
  T momentum = T(0.9);
  T weight_decay = T(1e-4);
  std::vector<std::vector<T>> velocity;  // one per parameter, lazily zero-initialized

  void reset() { velocity.clear(); }
};

/// Applies one update. Gradients are left untouched; the caller zeroes them.
/// Throws ContractViolation if a parameter has no gradient.
template <typename T>
void sgd_step(std::span<Tensor<T>> params, SgdState<T>& state);

/// Adam, used for the image-synthesis networks.
template <typename T>
struct AdamState {
  T learning_rate = T(2e-4);
  T beta1 = T(0.5);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
  long step = 0;
  std::vector<std::vector<T>> first;
  std::vector<std::vector<T>> second;
};

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace mmfuse
