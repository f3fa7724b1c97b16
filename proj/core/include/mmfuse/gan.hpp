#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmfuse/cam.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/nn.hpp"
#include "mmfuse/preprocess.hpp"

namespace mmfuse {

inline constexpr std::size_t kConditionChannels = kNumClasses + 1;

/// Bounds used to rescale raw CAM values to [-1,1] in the condition map.
struct CamRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// [5,side,side]: channels 0-3 one-hot class, channel 4 the CAM upsampled
/// bilinearly and mapped linearly from `range` to [-1,1] (clamped). A
/// degenerate range yields a zero CAM channel.
Tensor<float> make_condition(const CamMap& cam, int class_id, std::size_t side, CamRange range);

struct GanSchedule {
  std::size_t p = 100;  // coarse-only epochs
  std::size_t q = 50;   // joint epochs
  std::size_t coarse_side = 32;
  std::size_t full_side = 64;

  std::size_t total_epochs() const { return p + q; }
  void validate() const;
};

struct GanConfig {
  std::size_t image_channels = 3;
  std::size_t ngf = 8;
  std::size_t ndf = 8;
  std::size_t coarse_res_blocks = 4;
  std::size_t main_res_blocks = 2;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double feature_matching_weight = 10.0;
  double flip_probability = 0.5;
  double crop_fraction = 0.9;  // random crop side as a fraction, resized back

  void validate() const;
};

/// x + IN(conv(relu(IN(conv(x))))).
class GanResBlock : public nn::Module<float> {
 public:
  GanResBlock(std::size_t channels, Rng& rng);
  Tensor<float> forward(const Tensor<float>& x) const;
  void collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) override;

 private:
  nn::Conv2d<float> conv1_, conv2_;
  nn::InstanceNorm2d<float> norm1_, norm2_;
};

/// Coarse generator: c7s1 stem, three stride-2 convs, residual blocks, three
/// transposed convs back to the input side, then a c7s1 tanh image head.
class CoarseGenerator : public nn::Module<float> {
 public:
  CoarseGenerator(const GanConfig& config, Rng& rng);

  /// Last decoder activations [n,ngf,s,s], consumed by the refinement generator.
  Tensor<float> features(const Tensor<float>& condition) const;
  Tensor<float> forward(const Tensor<float>& condition) const;
  void collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) override;

  /// Every parameter except the image head (unused during joint training).
  std::vector<Tensor<float>> trunk_parameters();

 private:
  void collect_trunk(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out);

  nn::Conv2d<float> stem_;
  nn::InstanceNorm2d<float> stem_norm_;
  std::vector<nn::Conv2d<float>> down_;
  std::vector<nn::InstanceNorm2d<float>> down_norm_;
  std::vector<GanResBlock> res_;
  std::vector<nn::ConvTranspose2d<float>> up_;
  std::vector<nn::InstanceNorm2d<float>> up_norm_;
  nn::Conv2d<float> to_image_;
};

/// Refinement generator at full side: its stride-2 front end is summed with
/// the coarse generator's features before residual blocks and upsampling.
class RefineGenerator : public nn::Module<float> {
 public:
  RefineGenerator(const GanConfig& config, Rng& rng);
  Tensor<float> forward(const Tensor<float>& condition, const Tensor<float>& coarse_features) const;
  void collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) override;

 private:
  nn::Conv2d<float> stem_;
  nn::InstanceNorm2d<float> stem_norm_;
  nn::Conv2d<float> down_;
  nn::InstanceNorm2d<float> down_norm_;
  std::vector<GanResBlock> res_;
  nn::ConvTranspose2d<float> up_;
  nn::InstanceNorm2d<float> up_norm_;
  nn::Conv2d<float> to_image_;
};

/// Four 4x4 convs (two stride-2, two stride-1) with leaky ReLU 0.2; returns
/// every intermediate activation, the last one being the patch score map.
class PatchDiscriminator : public nn::Module<float> {
 public:
  PatchDiscriminator(std::size_t in_channels, std::size_t ndf, Rng& rng);
  std::vector<Tensor<float>> forward(const Tensor<float>& x) const;
  void collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) override;

 private:
  std::vector<nn::Conv2d<float>> convs_;
  std::vector<nn::InstanceNorm2d<float>> norms_;  // after conv 1 and 2
};

class GanPair : public nn::Module<float> {
 public:
  GanPair(const GanConfig& config, std::uint64_t seed);

  /// Full-resolution synthesis from a [n,5,full,full] condition.
  Tensor<float> generate(const Tensor<float>& condition) const;
  /// Coarse-only synthesis from a [n,5,coarse,coarse] condition.
  Tensor<float> generate_coarse(const Tensor<float>& condition) const;

  void collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) override;
  const GanConfig& config() const { return config_; }

  GanConfig config_;
  CoarseGenerator g_aux;
  RefineGenerator g_main;
  PatchDiscriminator d_aux;
  PatchDiscriminator d_main;
};

/// mean over layers of |D_k(a) - D_k(b)|_1, excluding the final score map.
Tensor<float> feature_matching_loss(const std::vector<Tensor<float>>& fake, const std::vector<Tensor<float>>& real);

struct GanExample {
  Tensor<float> condition;  // [5,full,full]
  Tensor<float> image;      // [c,full,full] in [-1,1]
};

struct GanEpochLog {
  std::size_t epoch = 0;
  bool joint = false;
  double d_loss = 0.0;
  double g_adv_loss = 0.0;
  double feature_matching = 0.0;
  std::size_t d_aux_side = 0;
  std::size_t d_main_side = 0;  // 0 while only the coarse pair trains
};

struct GanTrainOptions {
  GanSchedule schedule;
  std::uint64_t seed = 0;
  /// Called after every epoch (1-based); used to observe the schedule.
  std::function<void(std::size_t, GanPair&)> on_epoch_end;
};

/// Coarse phase: only g_aux and d_aux update, at the coarse side. Joint phase:
/// all four networks update at full side. Least-squares adversarial loss plus
/// discriminator feature matching. Training items are flipped and randomly
/// cropped, condition and image alike. Throws Error on a non-finite loss.
std::vector<GanEpochLog> train_gan(GanPair& gan, const std::vector<GanExample>& examples,
                                   const GanTrainOptions& options);

}  // namespace mmfuse
