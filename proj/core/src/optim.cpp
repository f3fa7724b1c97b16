#include "mmfuse/optim.hpp"

#include <cmath>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

template <typename T>
void check_grads(std::span<Tensor<T>> params, const char* who) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    expects(params[i].has_grad(), std::string(who) + ": parameter #" + std::to_string(i) + " of shape " +
                                      shape_str(params[i].shape()) + " has no gradient");
  }
}

template <typename T>
void size_slots(std::vector<std::vector<T>>& slots, std::span<Tensor<T>> params, const char* who) {
  if (slots.empty()) {
    for (const auto& p : params) slots.emplace_back(p.numel(), T(0));
  }
  expects(slots.size() == params.size(), std::string(who) + ": optimizer state belongs to a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    expects(slots[i].size() == params[i].numel(), std::string(who) + ": optimizer state size mismatch");
  }
}

}  // namespace

template <typename T>
void sgd_step(std::span<Tensor<T>> params, SgdState<T>& state) {
  expects(state.learning_rate > T(0), "sgd_step: learning rate must be positive");
  expects(state.momentum >= T(0) && state.momentum < T(1), "sgd_step: momentum must lie in [0,1)");
  expects(state.weight_decay >= T(0), "sgd_step: weight decay must be non-negative");
  check_grads(params, "sgd_step");
  size_slots(state.velocity, params, "sgd_step");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].data();
    auto g = params[k].grad();
    auto& v = state.velocity[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = g[i] + state.weight_decay * w[i];
      v[i] = state.momentum * v[i] + gi;
      w[i] -= state.learning_rate * v[i];
    }
  }
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  check_grads(params, "adam_step");
  size_slots(state.first, params, "adam_step");
  size_slots(state.second, params, "adam_step");
  ++state.step;
  const T c1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  const T c2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].data();
    auto g = params[k].grad();
    auto& m = state.first[k];
    auto& s = state.second[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g[i];
      s[i] = state.beta2 * s[i] + (T(1) - state.beta2) * g[i] * g[i];
      w[i] -= state.learning_rate * (m[i] / c1) / (std::sqrt(s[i] / c2) + state.epsilon);
    }
  }
}

template void sgd_step<float>(std::span<Tensor<float>>, SgdState<float>&);
template void sgd_step<double>(std::span<Tensor<double>>, SgdState<double>&);
template void adam_step<float>(std::span<Tensor<float>>, AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>>, AdamState<double>&);

}  // namespace mmfuse
