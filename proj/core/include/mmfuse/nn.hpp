#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/ops.hpp"
#include "mmfuse/parallel.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse::nn {

/// A parameter or buffer as seen by checkpointing and optimizers.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  Module(Module&&) noexcept = default;
  Module& operator=(Module&&) noexcept = default;

  /// Appends every parameter and buffer under `prefix`, in a fixed order.
  virtual void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) = 0;
  virtual void set_training(bool /*on*/) {}

  std::vector<NamedTensor<T>> named_tensors();
  std::vector<Tensor<T>> parameters();
  void zero_grad();
};

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t padding, bool bias,
         Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out] or undefined
  ops::Conv2dGeometry geometry;
};

template <typename T>
class ConvTranspose2d : public Module<T> {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t padding,
                  std::size_t output_padding, bool bias, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

  Tensor<T> weight;  // [in, out, k, k]
  Tensor<T> bias;
  ops::Conv2dGeometry geometry;
  std::size_t output_padding = 0;
};

/// Running statistics use decay 0.9 and epsilon 1e-5.
template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  static constexpr double kDecay = 0.9;
  static constexpr double kEpsilon = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor<T> forward(const Tensor<T>& x);
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
  void set_training(bool on) override { training = on; }

  Tensor<T> scale;
  Tensor<T> shift;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool training = true;
};

template <typename T>
class InstanceNorm2d : public Module<T> {
 public:
  InstanceNorm2d() = default;
  explicit InstanceNorm2d(std::size_t channels);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

  Tensor<T> scale;
  Tensor<T> shift;
};

/// v [n,d] -> v W, W [d,k]. There is deliberately no bias term.
template <typename T>
class LinearNoBias : public Module<T> {
 public:
  LinearNoBias() = default;
  LinearNoBias(std::size_t in_features, std::size_t out_features, Rng& rng);

  Tensor<T> forward(const Tensor<T>& v) const;
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

  Tensor<T> weight;
};

/// relu(bn2(conv2(relu(bn1(conv1(x))))) + skip(x)); skip is a strided 1x1
/// projection + BN when the shape changes, identity otherwise.
template <typename T>
class ResidualBlock : public Module<T> {
 public:
  ResidualBlock() = default;
  ResidualBlock(std::size_t in_ch, std::size_t out_ch, std::size_t stride, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
  void set_training(bool on) override;

  bool has_projection() const { return projection_.has_value(); }

  Conv2d<T> conv1;
  BatchNorm2d<T> bn1;
  Conv2d<T> conv2;
  BatchNorm2d<T> bn2;

 private:
  std::optional<Conv2d<T>> projection_;
  std::optional<BatchNorm2d<T>> projection_bn_;
};

template <typename T>
using Snapshot = std::vector<std::pair<std::string, std::vector<T>>>;

/// Value copy of every parameter and buffer.
template <typename T>
Snapshot<T> snapshot(Module<T>& module);

/// Writes a snapshot back; names and sizes must match exactly.
template <typename T>
void restore(Module<T>& module, const Snapshot<T>& snap);

/// FNV-1a over names and raw bytes of every tensor whose name starts with `prefix`.
template <typename T>
std::uint64_t parameter_hash(Module<T>& module, const std::string& prefix = "");

}  // namespace mmfuse::nn
