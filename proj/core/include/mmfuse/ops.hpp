#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmfuse/tensor.hpp"

// Differentiable primitives. Every function records a backward node when grad
// mode is on and an input requires grad. Shapes follow NCHW for images.
namespace mmfuse::ops {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Scalar sum / mean over every element.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
template <typename T>
Tensor<T> tanh(const Tensor<T>& a);

/// [n,d] x [d,k] -> [n,k].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Rows [begin, end) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);

/// Concatenation along axis 1 of rank-2 or rank-4 tensors with equal other dims.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation. x [n,c,h,w], weight [oc,c,kh,kw], bias [oc] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dGeometry geom);

/// Adjoint of conv2d. x [n,ic,h,w], weight [ic,oc,kh,kw];
/// output side = (in - 1) * stride - 2 * padding + k + output_padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           Conv2dGeometry geom, std::size_t output_padding);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Non-overlapping average pooling with a square window.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t window);

/// [n,c,h,w] -> [n,c], each map replaced by its mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Batch normalization over (n,h,w) per channel. In training mode batch
/// statistics are used and the running buffers are updated in place:
/// running = decay * running + (1 - decay) * batch (unbiased variance).
/// In eval mode the running buffers are read only.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training, T decay, T epsilon);

/// Per-sample, per-channel normalization over (h,w) with an affine transform.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, T epsilon);

/// Align-corners-false bilinear resampling of the two trailing axes.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// mean((x - target)^2), the least-squares GAN objective.
template <typename T>
Tensor<T> mse_to_constant(const Tensor<T>& x, T target);

/// mean(|a - b|).
template <typename T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace mmfuse::ops
