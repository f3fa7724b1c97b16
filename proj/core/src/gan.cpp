#include "mmfuse/gan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmfuse/error.hpp"
#include "mmfuse/ops.hpp"
#include "mmfuse/optim.hpp"

namespace mmfuse {

namespace {

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

constexpr float kLeakySlope = 0.2f;

}  // namespace

Tensor<float> make_condition(const CamMap& cam, int class_id, std::size_t side, CamRange range) {
  expects(class_id >= 0 && class_id < static_cast<int>(kNumClasses), "make_condition: class out of range");
  expects(side > 0, "make_condition: side must be positive");
  const std::size_t hw = side * side;
  std::vector<float> out(kConditionChannels * hw, 0.0f);
  std::fill_n(out.begin() + static_cast<long>(static_cast<std::size_t>(class_id) * hw), hw, 1.0f);
  if (range.hi > range.lo) {
    const auto up = upsample_cam(cam, side);
    for (std::size_t p = 0; p < hw; ++p) {
      const double v = 2.0 * (up[p] - range.lo) / (range.hi - range.lo) - 1.0;
      out[kNumClasses * hw + p] = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
  }
  return Tensor<float>({kConditionChannels, side, side}, std::move(out));
}

void GanSchedule::validate() const {
  expects(coarse_side > 0 && full_side == 2 * coarse_side, "gan schedule: full side must be twice the coarse side");
  expects(coarse_side % 8 == 0, "gan schedule: coarse side must be divisible by 8");
}

void GanConfig::validate() const {
  expects(image_channels == 1 || image_channels == 3, "gan: image channels must be 1 or 3");
  expects(ngf > 0 && ndf > 0, "gan: filter counts must be positive");
  expects(learning_rate > 0 && beta1 >= 0 && beta1 < 1, "gan: invalid optimizer settings");
  expects(feature_matching_weight >= 0, "gan: feature matching weight must be non-negative");
  expects(flip_probability >= 0 && flip_probability <= 1, "gan: flip probability must be in [0,1]");
  expects(crop_fraction > 0 && crop_fraction <= 1, "gan: crop fraction must be in (0,1]");
}

GanResBlock::GanResBlock(std::size_t channels, Rng& rng)
    : conv1_(channels, channels, 3, 1, 1, true, rng),
      conv2_(channels, channels, 3, 1, 1, true, rng),
      norm1_(channels),
      norm2_(channels) {}

Tensor<float> GanResBlock::forward(const Tensor<float>& x) const {
  auto y = ops::relu(norm1_.forward(conv1_.forward(x)));
  return ops::add(x, norm2_.forward(conv2_.forward(y)));
}

void GanResBlock::collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) {
  conv1_.collect(join(prefix, "conv1"), out);
  norm1_.collect(join(prefix, "norm1"), out);
  conv2_.collect(join(prefix, "conv2"), out);
  norm2_.collect(join(prefix, "norm2"), out);
}

CoarseGenerator::CoarseGenerator(const GanConfig& config, Rng& rng)
    : stem_(kConditionChannels, config.ngf, 7, 1, 3, true, rng), stem_norm_(config.ngf) {
  std::size_t ch = config.ngf;
  for (int i = 0; i < 3; ++i) {
    down_.emplace_back(ch, 2 * ch, 3, 2, 1, true, rng);
    down_norm_.emplace_back(2 * ch);
    ch *= 2;
  }
  for (std::size_t i = 0; i < config.coarse_res_blocks; ++i) res_.emplace_back(ch, rng);
  for (int i = 0; i < 3; ++i) {
    up_.emplace_back(ch, ch / 2, 3, 2, 1, 1, true, rng);
    up_norm_.emplace_back(ch / 2);
    ch /= 2;
  }
  to_image_ = nn::Conv2d<float>(ch, config.image_channels, 7, 1, 3, true, rng);
}

Tensor<float> CoarseGenerator::features(const Tensor<float>& condition) const {
  auto y = ops::relu(stem_norm_.forward(stem_.forward(condition)));
  for (std::size_t i = 0; i < down_.size(); ++i) y = ops::relu(down_norm_[i].forward(down_[i].forward(y)));
  for (const auto& r : res_) y = r.forward(y);
  for (std::size_t i = 0; i < up_.size(); ++i) y = ops::relu(up_norm_[i].forward(up_[i].forward(y)));
  return y;
}

Tensor<float> CoarseGenerator::forward(const Tensor<float>& condition) const {
  return ops::tanh(to_image_.forward(features(condition)));
}

void CoarseGenerator::collect_trunk(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) {
  stem_.collect(join(prefix, "stem"), out);
  stem_norm_.collect(join(prefix, "stem_norm"), out);
  for (std::size_t i = 0; i < down_.size(); ++i) {
    down_[i].collect(join(prefix, "down" + std::to_string(i)), out);
    down_norm_[i].collect(join(prefix, "down_norm" + std::to_string(i)), out);
  }
  for (std::size_t i = 0; i < res_.size(); ++i) res_[i].collect(join(prefix, "res" + std::to_string(i)), out);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    up_[i].collect(join(prefix, "up" + std::to_string(i)), out);
    up_norm_[i].collect(join(prefix, "up_norm" + std::to_string(i)), out);
  }
}

void CoarseGenerator::collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) {
  collect_trunk(prefix, out);
  to_image_.collect(join(prefix, "to_image"), out);
}

std::vector<Tensor<float>> CoarseGenerator::trunk_parameters() {
  std::vector<nn::NamedTensor<float>> named;
  collect_trunk("", named);
  std::vector<Tensor<float>> out;
  for (auto& nt : named) {
    if (nt.trainable) out.push_back(nt.tensor);
  }
  return out;
}

RefineGenerator::RefineGenerator(const GanConfig& config, Rng& rng)
    : stem_(kConditionChannels, config.ngf, 7, 1, 3, true, rng),
      stem_norm_(config.ngf),
      down_(config.ngf, config.ngf, 3, 2, 1, true, rng),
      down_norm_(config.ngf),
      up_(config.ngf, config.ngf, 3, 2, 1, 1, true, rng),
      up_norm_(config.ngf),
      to_image_(config.ngf, config.image_channels, 7, 1, 3, true, rng) {
  for (std::size_t i = 0; i < config.main_res_blocks; ++i) res_.emplace_back(config.ngf, rng);
}

Tensor<float> RefineGenerator::forward(const Tensor<float>& condition, const Tensor<float>& coarse_features) const {
  auto y = ops::relu(stem_norm_.forward(stem_.forward(condition)));
  y = ops::relu(down_norm_.forward(down_.forward(y)));
  expects(y.shape() == coarse_features.shape(), "refine generator: coarse features " +
                                                    shape_str(coarse_features.shape()) + " do not match " +
                                                    shape_str(y.shape()));
  y = ops::add(y, coarse_features);
  for (const auto& r : res_) y = r.forward(y);
  y = ops::relu(up_norm_.forward(up_.forward(y)));
  return ops::tanh(to_image_.forward(y));
}

void RefineGenerator::collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) {
  stem_.collect(join(prefix, "stem"), out);
  stem_norm_.collect(join(prefix, "stem_norm"), out);
  down_.collect(join(prefix, "down"), out);
  down_norm_.collect(join(prefix, "down_norm"), out);
  for (std::size_t i = 0; i < res_.size(); ++i) res_[i].collect(join(prefix, "res" + std::to_string(i)), out);
  up_.collect(join(prefix, "up"), out);
  up_norm_.collect(join(prefix, "up_norm"), out);
  to_image_.collect(join(prefix, "to_image"), out);
}

PatchDiscriminator::PatchDiscriminator(std::size_t in_channels, std::size_t ndf, Rng& rng) {
  convs_.emplace_back(in_channels, ndf, 4, 2, 2, true, rng);
  convs_.emplace_back(ndf, 2 * ndf, 4, 2, 2, true, rng);
  convs_.emplace_back(2 * ndf, 4 * ndf, 4, 1, 2, true, rng);
  convs_.emplace_back(4 * ndf, 1, 4, 1, 2, true, rng);
  norms_.emplace_back(2 * ndf);
  norms_.emplace_back(4 * ndf);
}

std::vector<Tensor<float>> PatchDiscriminator::forward(const Tensor<float>& x) const {
  std::vector<Tensor<float>> out;
  auto y = ops::leaky_relu(convs_[0].forward(x), kLeakySlope);
  out.push_back(y);
  for (std::size_t i = 1; i < 3; ++i) {
    y = ops::leaky_relu(norms_[i - 1].forward(convs_[i].forward(y)), kLeakySlope);
    out.push_back(y);
  }
  out.push_back(convs_[3].forward(y));
  return out;
}

void PatchDiscriminator::collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(join(prefix, "conv" + std::to_string(i)), out);
  for (std::size_t i = 0; i < norms_.size(); ++i) norms_[i].collect(join(prefix, "norm" + std::to_string(i + 1)), out);
}

namespace {
Rng seeded(std::uint64_t seed, std::uint64_t part) {
  return Rng(derive_seed({seed, 0x6a4u, part}));
}
}  // namespace

GanPair::GanPair(const GanConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)),
      g_aux([&] {
        auto rng = seeded(seed, 1);
        return CoarseGenerator(config, rng);
      }()),
      g_main([&] {
        auto rng = seeded(seed, 2);
        return RefineGenerator(config, rng);
      }()),
      d_aux([&] {
        auto rng = seeded(seed, 3);
        return PatchDiscriminator(kConditionChannels + config.image_channels, config.ndf, rng);
      }()),
      d_main([&] {
        auto rng = seeded(seed, 4);
        return PatchDiscriminator(kConditionChannels + config.image_channels, config.ndf, rng);
      }()) {}

Tensor<float> GanPair::generate(const Tensor<float>& condition) const {
  expects(condition.rank() == 4 && condition.dim(1) == kConditionChannels, "gan: expected [n,5,s,s] condition");
  return g_main.forward(condition, g_aux.features(ops::avg_pool2d(condition, 2)));
}

Tensor<float> GanPair::generate_coarse(const Tensor<float>& condition) const {
  expects(condition.rank() == 4 && condition.dim(1) == kConditionChannels, "gan: expected [n,5,s,s] condition");
  return g_aux.forward(condition);
}

void GanPair::collect(const std::string& prefix, std::vector<nn::NamedTensor<float>>& out) {
  g_aux.collect(join(prefix, "g_aux"), out);
  g_main.collect(join(prefix, "g_main"), out);
  d_aux.collect(join(prefix, "d_aux"), out);
  d_main.collect(join(prefix, "d_main"), out);
}

Tensor<float> feature_matching_loss(const std::vector<Tensor<float>>& fake, const std::vector<Tensor<float>>& real) {
  expects(fake.size() == real.size() && fake.size() >= 2, "feature matching: layer lists must match");
  Tensor<float> total;
  for (std::size_t i = 0; i + 1 < fake.size(); ++i) {
    auto term = ops::l1_distance(fake[i], real[i]);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return ops::scale(total, 1.0f / static_cast<float>(fake.size() - 1));
}

namespace {

/// Shared flip + crop on a stacked [c,s,s] tensor, resized back to s.
Tensor<float> jitter_pair(const Tensor<float>& stacked, const GanConfig& config, Rng& rng) {
  NoGradGuard no_grad;
  const std::size_t c = stacked.dim(0), s = stacked.dim(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool flip = u(rng) < config.flip_probability;
  const auto crop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.crop_fraction * s)));
  const auto x0 = static_cast<std::size_t>(u(rng) * static_cast<double>(s - crop + 1)) % (s - crop + 1);
  const auto y0 = static_cast<std::size_t>(u(rng) * static_cast<double>(s - crop + 1)) % (s - crop + 1);
  auto src = stacked.data();
  std::vector<float> cropped(c * crop * crop);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < crop; ++y) {
      for (std::size_t x = 0; x < crop; ++x) {
        const std::size_t sx = flip ? s - 1 - (x0 + x) : x0 + x;
        cropped[(k * crop + y) * crop + x] = src[(k * s + y0 + y) * s + sx];
      }
    }
  }
  Tensor<float> t({c, crop, crop}, std::move(cropped));
  return crop == s ? t : ops::bilinear_resize(t, s, s);
}

struct Accum {
  double d = 0, g = 0, fm = 0;
  std::size_t n = 0;
};

void check_finite(double v, const char* what, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(v)) {
    throw Error(std::string("gan training: non-finite ") + what + " at epoch " + std::to_string(epoch) + ", step " +
                std::to_string(step));
  }
}

template <typename... Ts>
std::vector<Tensor<float>> concat_params(Ts&&... groups) {
  std::vector<Tensor<float>> out;
  (out.insert(out.end(), groups.begin(), groups.end()), ...);
  return out;
}

void zero_all(std::vector<Tensor<float>>& ps) {
  for (auto& p : ps) p.zero_grad();
}

}  // namespace

std::vector<GanEpochLog> train_gan(GanPair& gan, const std::vector<GanExample>& examples,
                                   const GanTrainOptions& options) {
  const auto& sched = options.schedule;
  sched.validate();
  const auto& cfg = gan.config();
  const std::size_t full = sched.full_side, coarse = sched.coarse_side;
  for (const auto& ex : examples) {
    expects(ex.condition.shape() == Shape({kConditionChannels, full, full}) &&
                ex.image.shape() == Shape({cfg.image_channels, full, full}),
            "gan training example does not match the schedule's full side");
  }
  if (examples.empty() || sched.total_epochs() == 0) return {};

  auto make_adam = [&] {
    AdamState<float> s;
    s.learning_rate = static_cast<float>(cfg.learning_rate);
    s.beta1 = static_cast<float>(cfg.beta1);
    return s;
  };
  const auto fm_weight = static_cast<float>(cfg.feature_matching_weight);

  std::vector<GanEpochLog> history;
  AdamState<float> opt_g, opt_d;
  std::vector<Tensor<float>> g_params, d_params;
  std::vector<std::size_t> order(examples.size());

  for (std::size_t epoch = 1; epoch <= sched.total_epochs(); ++epoch) {
    const bool joint = epoch > sched.p;
    if (epoch == 1 || epoch == sched.p + 1) {
      opt_g = make_adam();
      opt_d = make_adam();
      if (joint) {
        g_params = concat_params(gan.g_aux.trunk_parameters(), gan.g_main.parameters());
        d_params = concat_params(gan.d_aux.parameters(), gan.d_main.parameters());
      } else {
        g_params = gan.g_aux.parameters();
        d_params = gan.d_aux.parameters();
      }
    }
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed({options.seed, 0x7a11u, epoch}));
    std::shuffle(order.begin(), order.end(), rng);

    Accum acc;
    GanEpochLog log;
    log.epoch = epoch;
    log.joint = joint;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const auto& ex = examples[order[step]];
      std::vector<float> joined(ex.condition.data().begin(), ex.condition.data().end());
      joined.insert(joined.end(), ex.image.data().begin(), ex.image.data().end());
      auto stacked = jitter_pair(Tensor<float>({kConditionChannels + cfg.image_channels, full, full}, std::move(joined)),
                                 cfg, rng);
      auto batch = ops::reshape(stacked, {1, kConditionChannels + cfg.image_channels, full, full});
      auto sd = batch.data();
      const std::size_t split = kConditionChannels * full * full;
      Tensor<float> cond_full({1, kConditionChannels, full, full}, std::vector<float>(sd.begin(), sd.begin() + static_cast<long>(split)));
      Tensor<float> real_full({1, cfg.image_channels, full, full}, std::vector<float>(sd.begin() + static_cast<long>(split), sd.end()));
      Tensor<float> cond_coarse, real_coarse;
      {
        NoGradGuard no_grad;
        cond_coarse = ops::avg_pool2d(cond_full, 2);
        real_coarse = ops::avg_pool2d(real_full, 2);
      }
      expects(cond_coarse.dim(2) == coarse, "gan training: coarse side mismatch");

      // Fake images for each discriminator scale.
      Tensor<float> fake_aux, fake_main;
      if (joint) {
        fake_main = gan.g_main.forward(cond_full, gan.g_aux.features(cond_coarse));
        fake_aux = ops::avg_pool2d(fake_main, 2);
      } else {
        fake_aux = gan.g_aux.forward(cond_coarse);
      }
      log.d_aux_side = fake_aux.dim(2);
      log.d_main_side = joint ? fake_main.dim(2) : 0;

      // Discriminator update.
      zero_all(d_params);
      auto d_loss_at = [&](PatchDiscriminator& d, const Tensor<float>& cond, const Tensor<float>& real,
                           const Tensor<float>& fake) {
        auto pred_fake = d.forward(ops::concat_channels<float>({cond, fake.detach()})).back();
        auto pred_real = d.forward(ops::concat_channels<float>({cond, real})).back();
        return ops::scale(ops::add(ops::mse_to_constant(pred_fake, 0.0f), ops::mse_to_constant(pred_real, 1.0f)), 0.5f);
      };
      auto d_loss = d_loss_at(gan.d_aux, cond_coarse, real_coarse, fake_aux);
      if (joint) d_loss = ops::add(d_loss, d_loss_at(gan.d_main, cond_full, real_full, fake_main));
      check_finite(d_loss.item(), "discriminator loss", epoch, step);
      backward(d_loss);
      adam_step(std::span<Tensor<float>>(d_params), opt_d);

      // Generator update.
      zero_all(g_params);
      zero_all(d_params);
      auto g_terms = [&](PatchDiscriminator& d, const Tensor<float>& cond, const Tensor<float>& real,
                         const Tensor<float>& fake) {
        auto feats_fake = d.forward(ops::concat_channels<float>({cond, fake}));
        std::vector<Tensor<float>> feats_real;
        {
          NoGradGuard no_grad;
          feats_real = d.forward(ops::concat_channels<float>({cond, real}));
        }
        return std::pair{ops::mse_to_constant(feats_fake.back(), 1.0f), feature_matching_loss(feats_fake, feats_real)};
      };
      auto [adv, fm] = g_terms(gan.d_aux, cond_coarse, real_coarse, fake_aux);
      if (joint) {
        auto [adv2, fm2] = g_terms(gan.d_main, cond_full, real_full, fake_main);
        adv = ops::add(adv, adv2);
        fm = ops::add(fm, fm2);
      }
      auto g_loss = ops::add(adv, ops::scale(fm, fm_weight));
      check_finite(g_loss.item(), "generator loss", epoch, step);
      backward(g_loss);
      adam_step(std::span<Tensor<float>>(g_params), opt_g);
      zero_all(d_params);

      acc.d += d_loss.item();
      acc.g += adv.item();
      acc.fm += fm.item();
      ++acc.n;
    }
    log.d_loss = acc.d / static_cast<double>(acc.n);
    log.g_adv_loss = acc.g / static_cast<double>(acc.n);
    log.feature_matching = acc.fm / static_cast<double>(acc.n);
    history.push_back(log);
    if (options.on_epoch_end) options.on_epoch_end(epoch, gan);
  }
  return history;
}

}  // namespace mmfuse
