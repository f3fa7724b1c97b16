#include "mmfuse/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmfuse/error.hpp"

namespace mmfuse {

template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T>& x, double eps) {
  expects(eps > 0, "grad_check: eps must be positive");
  expects(x.is_leaf(), "grad_check: x must be a leaf tensor");
  x.set_requires_grad(true);
  x.zero_grad();

  auto loss = f(x);
  expects(loss.numel() == 1, "grad_check: f must be scalar-valued");
  if (!std::isfinite(static_cast<double>(loss.item()))) throw Error("grad_check: f(x) is not finite");
  backward(loss);
  std::vector<T> analytic(x.numel(), T(0));
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  GradCheckReport report;
  NoGradGuard no_grad;
  auto values = x.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = static_cast<T>(saved + eps);
    const double up = static_cast<double>(f(x).item());
    values[i] = static_cast<T>(saved - eps);
    const double down = static_cast<double>(f(x).item());
    values[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error("grad_check: non-finite value at coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2 * eps);
    const double a = static_cast<double>(analytic[i]);
    if (!std::isfinite(a)) throw Error("grad_check: non-finite gradient at coordinate " + std::to_string(i));
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (i == 0 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

template GradCheckReport grad_check<float>(const std::function<Tensor<float>(const Tensor<float>&)>&, Tensor<float>&,
                                           double);
template GradCheckReport grad_check<double>(const std::function<Tensor<double>(const Tensor<double>&)>&,
                                            Tensor<double>&, double);

}  // namespace mmfuse
