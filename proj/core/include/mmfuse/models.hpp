#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mmfuse/nn.hpp"
#include "mmfuse/types.hpp"

namespace mmfuse {

/// ResNet-18-shaped backbone: strided stem conv + 3x3/2 max pool, then one
/// stage per width whose first block downsamples (except stage 0).
struct BackboneConfig {
  std::size_t input_side = 448;
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::vector<std::size_t> blocks{2, 2, 2, 2};
  std::size_t stem_kernel = 7;

  /// ResNet-18 widths (512 final channels).
  static BackboneConfig full_scale(std::size_t input_side = 448);

  std::size_t total_stride() const;
  std::size_t feature_side() const;
  std::size_t channels() const { return widths.back(); }
  /// Throws ContractViolation on an inconsistent config.
  void validate() const;
};

template <typename T>
class Backbone : public nn::Module<T> {
 public:
  Backbone(const BackboneConfig& config, std::uint64_t seed);

  /// x [n,3,s,s] with s == input_side -> feature maps [n,C,m,m].
  Tensor<T> forward(const Tensor<T>& x);
  void collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) override;
  void set_training(bool on) override;

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  nn::Conv2d<T> stem_;
  nn::BatchNorm2d<T> stem_bn_;
  std::vector<nn::ResidualBlock<T>> blocks_;
};

template <typename T>
struct SingleOutput {
  Tensor<T> logits;    // [n,4]
  Tensor<T> features;  // [n,C,m,m]
};

/// One backbone + bias-free [C,4] head (CFP-CNN or OCT-CNN).
template <typename T>
class SingleCnn : public nn::Module<T> {
 public:
  SingleCnn(const BackboneConfig& config, std::uint64_t seed);

  SingleOutput<T> forward(const Tensor<T>& images);
  void collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) override;
  void set_training(bool on) override { backbone.set_training(on); }

  Backbone<T> backbone;
  nn::LinearNoBias<T> head;
};

template <typename T>
struct MmOutput {
  Tensor<T> scores;      // s   [n,4]
  Tensor<T> cfp_scores;  // s_f [n,4]
  Tensor<T> oct_scores;  // s_o [n,4]
  Tensor<T> cfp_features;
  Tensor<T> oct_features;
};

/// Two independently parameterized backbones fused after global average
/// pooling. The [2C,4] head splits into CFP rows [0,C) and OCT rows [C,2C),
/// and scores = cfp_scores + oct_scores holds bit-exactly.
template <typename T>
class MmCnn : public nn::Module<T> {
 public:
  MmCnn(const BackboneConfig& config, std::uint64_t seed);

  MmOutput<T> forward(const Tensor<T>& cfp, const Tensor<T>& oct);
  void collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) override;
  void set_training(bool on) override;

  std::size_t fused_width() const { return 2 * config().channels(); }
  const BackboneConfig& config() const { return cfp_branch.config(); }

  Backbone<T> cfp_branch;
  Backbone<T> oct_branch;
  nn::LinearNoBias<T> head;  // [2C,4]
};

/// Row-wise argmax of [n,k] scores.
template <typename T>
std::vector<int> predict(const Tensor<T>& scores);

/// [1,h,w] -> [3,h,w] by repeating the intensity plane.
template <typename T>
Tensor<T> gray_to_rgb(const Tensor<T>& gray);

}  // namespace mmfuse
