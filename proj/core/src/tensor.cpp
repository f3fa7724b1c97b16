#include "mmfuse/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape) : Tensor(shape, std::vector<T>(shape_numel(shape), T(0))) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  for (auto d : shape) expects(d > 0, "tensor dimensions must be positive, got " + shape_str(shape));
  expects(shape_numel(shape) == values.size(),
          "tensor data length " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{1}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::from_impl(detail::ImplPtr<T> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  expects(defined(), "use of an undefined tensor");
  return impl_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  expects(axis < rank(), "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  return impl_->shape[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return defined() ? impl_->data.size() : 0;
}

template <typename T>
std::span<T> Tensor<T>::data() {
  expects(defined(), "use of an undefined tensor");
  return impl_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  expects(defined(), "use of an undefined tensor");
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  expects(numel() == 1, "item() needs a single-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return defined() && impl_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  expects(defined(), "use of an undefined tensor");
  expects(is_leaf() || on, "cannot clear requires_grad on a non-leaf tensor");
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  return defined() && impl_->node == nullptr;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return defined() && impl_->grad.size() == impl_->data.size();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  expects(has_grad(), "tensor of shape " + shape_str(shape()) + " has no gradient");
  return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  expects(defined(), "use of an undefined tensor");
  return impl_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), impl_->data);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  expects(loss.defined() && loss.numel() == 1,
          "backward() needs a scalar loss, got shape " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  const auto& root = loss.impl();
  if (!root->requires_grad) return;

  // Post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::TensorImpl<T>*> order;
  std::unordered_set<detail::TensorImpl<T>*> visited;
  struct Frame {
    detail::TensorImpl<T>* impl;
    std::size_t next_input;
  };
  std::vector<Frame> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    auto* node = top.impl->node.get();
    if (node && top.next_input < node->inputs.size()) {
      auto* child = node->inputs[top.next_input++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
      continue;
    }
    order.push_back(top.impl);
    stack.pop_back();
  }

  for (auto* impl : order) {
    if (impl->node) impl->grad.assign(impl->data.size(), T(0));
  }
  root->ensure_grad()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* impl = *it;
    if (!impl->node) continue;
    impl->node->backward(*impl, impl->node->inputs);
    if (impl != root.get()) {
      impl->grad.clear();
      impl->grad.shrink_to_fit();
    }
  }
}

template <typename T>
void zero_grads(std::span<Tensor<T>> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template void zero_grads<float>(std::span<Tensor<float>>);
template void zero_grads<double>(std::span<Tensor<double>>);

}  // namespace mmfuse
