#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmfuse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

// One recorded operation. `backward` reads out.grad and accumulates into the
// grads of `inputs`; it never holds a reference to its own output.
template <typename T>
struct Node {
  std::vector<ImplPtr<T>> inputs;
  std::function<void(const TensorImpl<T>& out, const std::vector<ImplPtr<T>>& inputs)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulated into
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;  // null for leaves

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode gradient support.
///
/// A Tensor is a handle: copies share storage and gradient. Operations in
/// ops.hpp record a node on the output whenever grad mode is on and any input
/// requires grad, so the graph is rebuilt on every forward pass.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);

  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Copy of the values with no graph history.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    auto src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return Tensor<U>(shape(), std::move(out));
  }

  const detail::ImplPtr<T>& impl() const { return impl_; }
  static Tensor from_impl(detail::ImplPtr<T> impl);

 private:
  detail::ImplPtr<T> impl_;
};

/// Reverse sweep from a scalar loss. Leaf grads accumulate (+=) across calls
/// until zeroed; intermediate grads are scratch and released afterwards.
template <typename T>
void backward(const Tensor<T>& loss);

template <typename T>
void zero_grads(std::span<Tensor<T>> tensors);

/// True while no NoGradGuard is alive on this thread.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mmfuse
