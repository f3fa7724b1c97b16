#include "mmfuse/models.hpp"

#include "mmfuse/error.hpp"

namespace mmfuse {

BackboneConfig BackboneConfig::full_scale(std::size_t input_side) {
  BackboneConfig c;
  c.input_side = input_side;
  c.widths = {64, 128, 256, 512};
  c.blocks = {2, 2, 2, 2};
  c.stem_kernel = 7;
  return c;
}

std::size_t BackboneConfig::total_stride() const {
  // stem conv /2, max pool /2, then /2 at the start of every stage but the first
  return std::size_t{4} << (widths.empty() ? 0 : widths.size() - 1);
}

std::size_t BackboneConfig::feature_side() const {
  validate();
  return input_side / total_stride();
}

void BackboneConfig::validate() const {
  expects(!widths.empty(), "backbone: at least one stage is required");
  expects(widths.size() == blocks.size(), "backbone: widths and blocks must have the same length");
  for (auto w : widths) expects(w > 0, "backbone: stage widths must be positive");
  for (auto b : blocks) expects(b > 0, "backbone: every stage needs at least one block");
  expects(stem_kernel % 2 == 1, "backbone: stem kernel must be odd");
  expects(input_side > 0 && input_side % total_stride() == 0,
          "backbone: input side " + std::to_string(input_side) + " is not divisible by total stride " +
              std::to_string(total_stride()));
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  stem_ = nn::Conv2d<T>(3, config_.widths[0], config_.stem_kernel, 2, config_.stem_kernel / 2, false, rng);
  stem_bn_ = nn::BatchNorm2d<T>(config_.widths[0]);
  std::size_t in = config_.widths[0];
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    for (std::size_t b = 0; b < config_.blocks[s]; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      blocks_.emplace_back(in, config_.widths[s], stride, rng);
      in = config_.widths[s];
    }
  }
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& x) {
  expects(x.rank() == 4 && x.dim(1) == 3, "backbone: expected [n,3,s,s] input, got " + shape_str(x.shape()));
  expects(x.dim(2) == config_.input_side && x.dim(3) == config_.input_side,
          "backbone: input side must be " + std::to_string(config_.input_side) + ", got " + shape_str(x.shape()));
  auto y = ops::relu(stem_bn_.forward(stem_.forward(x)));
  y = ops::max_pool2d(y, 3, 2, 1);
  for (auto& block : blocks_) y = block.forward(y);
  return y;
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) {
  const std::string p = prefix.empty() ? "" : prefix + ".";
  stem_.collect(p + "stem", out);
  stem_bn_.collect(p + "stem_bn", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(p + "block" + std::to_string(i), out);
}

template <typename T>
void Backbone<T>::set_training(bool on) {
  stem_bn_.set_training(on);
  for (auto& b : blocks_) b.set_training(on);
}

template <typename T>
SingleCnn<T>::SingleCnn(const BackboneConfig& config, std::uint64_t seed)
    : backbone(config, derive_seed({seed, 1})), head([&] {
        Rng rng(derive_seed({seed, 3}));
        return nn::LinearNoBias<T>(config.channels(), kNumClasses, rng);
      }()) {}

template <typename T>
SingleOutput<T> SingleCnn<T>::forward(const Tensor<T>& images) {
  auto features = backbone.forward(images);
  auto logits = head.forward(ops::global_avg_pool(features));
  return {logits, features};
}

template <typename T>
void SingleCnn<T>::collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) {
  const std::string p = prefix.empty() ? "" : prefix + ".";
  backbone.collect(p + "backbone", out);
  head.collect(p + "head", out);
}

template <typename T>
MmCnn<T>::MmCnn(const BackboneConfig& config, std::uint64_t seed)
    : cfp_branch(config, derive_seed({seed, 1})),
      oct_branch(config, derive_seed({seed, 2})),
      head([&] {
        Rng rng(derive_seed({seed, 3}));
        return nn::LinearNoBias<T>(2 * config.channels(), kNumClasses, rng);
      }()) {}

template <typename T>
MmOutput<T> MmCnn<T>::forward(const Tensor<T>& cfp, const Tensor<T>& oct) {
  expects(cfp.rank() == 4 && oct.rank() == 4 && cfp.dim(0) == oct.dim(0),
          "mm-cnn: paired batches must have equal size, got " + shape_str(cfp.shape()) + " and " +
              shape_str(oct.shape()));
  const std::size_t c = config().channels();
  auto f_cfp = cfp_branch.forward(cfp);
  auto f_oct = oct_branch.forward(oct);
  auto s_f = ops::matmul(ops::global_avg_pool(f_cfp), ops::slice_rows(head.weight, 0, c));
  auto s_o = ops::matmul(ops::global_avg_pool(f_oct), ops::slice_rows(head.weight, c, 2 * c));
  auto s = ops::add(s_f, s_o);
  return {s, s_f, s_o, f_cfp, f_oct};
}

template <typename T>
void MmCnn<T>::collect(const std::string& prefix, std::vector<nn::NamedTensor<T>>& out) {
  const std::string p = prefix.empty() ? "" : prefix + ".";
  cfp_branch.collect(p + "cfp", out);
  oct_branch.collect(p + "oct", out);
  head.collect(p + "head", out);
}

template <typename T>
void MmCnn<T>::set_training(bool on) {
  cfp_branch.set_training(on);
  oct_branch.set_training(on);
}

template <typename T>
std::vector<int> predict(const Tensor<T>& scores) {
  expects(scores.rank() == 2, "predict: expected [n,k] scores");
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(n);
  auto s = scores.data();
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (s[r * k + j] > s[r * k + best]) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
Tensor<T> gray_to_rgb(const Tensor<T>& gray) {
  expects(gray.rank() == 3 && gray.dim(0) == 1, "gray_to_rgb: expected [1,h,w], got " + shape_str(gray.shape()));
  const std::size_t hw = gray.dim(1) * gray.dim(2);
  std::vector<T> out(3 * hw);
  auto g = gray.data();
  for (std::size_t c = 0; c < 3; ++c) std::copy(g.begin(), g.end(), out.begin() + c * hw);
  return Tensor<T>({3, gray.dim(1), gray.dim(2)}, std::move(out));
}

#define MMFUSE_INSTANTIATE_MODELS(T)                        \
  template class Backbone<T>;                               \
  template class SingleCnn<T>;                              \
  template class MmCnn<T>;                                  \
  template std::vector<int> predict<T>(const Tensor<T>&);   \
  template Tensor<T> gray_to_rgb<T>(const Tensor<T>&);

MMFUSE_INSTANTIATE_MODELS(float)
MMFUSE_INSTANTIATE_MODELS(double)

}  // namespace mmfuse
