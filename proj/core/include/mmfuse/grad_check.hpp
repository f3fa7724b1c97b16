#pragma once

#include <cstddef>
#include <functional>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct GradCheckReport {
  double max_relative_error = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0;
  double numeric_at_worst = 0;
};

/// Compares the reverse-mode gradient of a scalar function against central
/// differences, coordinate by coordinate:
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
/// `x` must be a leaf; it is perturbed in place and restored. `f` is called
/// once with grad recording and twice per coordinate without.
/// Throws mmfuse::Error naming the coordinate if a non-finite value shows up.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T>& x, double eps);

}  // namespace mmfuse
