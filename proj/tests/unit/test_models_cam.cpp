#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmfuse/cam.hpp"
#include "mmfuse/models.hpp"
#include "mmfuse/ops.hpp"
#include "oracles.hpp"

using namespace mmfuse;
using mmfuse::oracle::random_tensor;

namespace {

BackboneConfig tiny(std::size_t side = 32) {
  BackboneConfig c;
  c.input_side = side;
  c.widths = {4, 8};
  c.blocks = {1, 1};
  return c;
}

void zero(Tensor<float>& t) {
  for (auto& v : t.data()) v = 0.f;
}

}  // namespace

TEST(Backbone, FeatureSideFollowsTotalStride) {
  EXPECT_EQ(BackboneConfig::full_scale(448).feature_side(), 14u);
  EXPECT_EQ(BackboneConfig::full_scale(224).feature_side(), 7u);
  EXPECT_EQ(BackboneConfig::full_scale(448).channels(), 512u);
  auto c = tiny(32);
  EXPECT_EQ(c.total_stride(), 8u);
  EXPECT_EQ(c.feature_side(), 4u);
}

TEST(Backbone, RejectsIndivisibleSide) {
  auto c = tiny(30);
  EXPECT_THROW(c.validate(), ContractViolation);
}

TEST(Backbone, ForwardShapeAndWrongInput) {
  Backbone<float> b(tiny(32), 1);
  std::mt19937_64 rng(1);
  auto f = b.forward(random_tensor<float>({2, 3, 32, 32}, rng));
  EXPECT_EQ(f.shape(), (Shape{2, 8, 4, 4}));
  EXPECT_THROW(b.forward(random_tensor<float>({2, 3, 16, 16}, rng)), ContractViolation);
}

TEST(SingleCnn, ZeroHeadGivesZeroLogits) {
  SingleCnn<float> m(tiny(), 2);
  zero(m.head.weight);
  std::mt19937_64 rng(2);
  auto out = m.forward(random_tensor<float>({2, 3, 32, 32}, rng));
  for (float v : out.logits.data()) EXPECT_EQ(v, 0.f);
}

TEST(SingleCnn, LogitsEqualExternalGapLinear) {
  SingleCnn<double> m(tiny(), 3);
  m.set_training(false);
  std::mt19937_64 rng(3);
  auto out = m.forward(random_tensor<double>({2, 3, 32, 32}, rng));
  const auto& f = out.features;
  const std::size_t C = f.dim(1), hw = f.dim(2) * f.dim(3);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 4; ++k) {
      double s = 0;
      for (std::size_t c = 0; c < C; ++c) {
        double g = 0;
        for (std::size_t i = 0; i < hw; ++i) g += f.data()[(n * C + c) * hw + i];
        s += g / static_cast<double>(hw) * m.head.weight.data()[c * 4 + k];
      }
      EXPECT_NEAR(out.logits.data()[n * 4 + k], s, 1e-10);
    }
}

TEST(MmCnn, ScoresDecomposeAndOctZeroing) {
  MmCnn<float> m(tiny(), 4);
  std::mt19937_64 rng(4);
  auto a = random_tensor<float>({2, 3, 32, 32}, rng), b = random_tensor<float>({2, 3, 32, 32}, rng);
  auto out = m.forward(a, b);
  for (std::size_t i = 0; i < out.scores.numel(); ++i) {
    EXPECT_LT(std::abs(out.scores.data()[i] - (out.cfp_scores.data()[i] + out.oct_scores.data()[i])), 1e-5);
  }
  const std::size_t C = m.config().channels();
  for (std::size_t i = C * 4; i < 2 * C * 4; ++i) m.head.weight.data()[i] = 0.f;
  m.set_training(false);
  auto z = m.forward(a, b);
  for (std::size_t i = 0; i < z.scores.numel(); ++i) EXPECT_EQ(z.scores.data()[i], z.cfp_scores.data()[i]);
}

TEST(MmCnn, BranchesHaveIndependentInit) {
  MmCnn<float> m(tiny(), 5);
  EXPECT_NE(nn::parameter_hash(m, "cfp"), nn::parameter_hash(m, "oct"));
  EXPECT_EQ(m.fused_width(), 16u);
}

TEST(MmCnn, FullScaleFusedWidth) {
  MmCnn<float> m(BackboneConfig::full_scale(448), 0);
  EXPECT_EQ(m.fused_width(), 1024u);
  EXPECT_EQ(m.head.weight.shape(), (Shape{1024, 4}));
}

TEST(GrayToRgb, Replicates) {
  Tensor<float> g({1, 1, 1}, {0.3f});
  auto rgb = gray_to_rgb(g);
  ASSERT_EQ(rgb.shape(), (Shape{3, 1, 1}));
  for (float v : rgb.data()) EXPECT_EQ(v, 0.3f);
  std::mt19937_64 rng(6);
  auto r = random_tensor<float>({1, 4, 5}, rng);
  auto r3 = gray_to_rgb(r);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(r3.data()[c * 20 + i], r.data()[i]);
  const auto zeros = gray_to_rgb(Tensor<float>({1, 2, 2}));
  for (float v : zeros.data()) EXPECT_EQ(v, 0.f);
}

TEST(Cam, OneHotWeightSelectsMap) {
  std::mt19937_64 rng(7);
  auto f = random_tensor<double>({3, 2, 2}, rng);
  std::vector<double> w{0, 1, 0};
  auto cam = compute_cam_single<double>(f, w, 0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(cam.grid[i], f.data()[4 + i] / 4.0);
}

TEST(Cam, ConstantFeatures) {
  auto f = Tensor<double>::full({3, 4, 4}, 2.0);
  std::vector<double> w{0.5, 1.0, 1.5};
  auto cam = compute_cam_single<double>(f, w, 1);
  for (double v : cam.grid) EXPECT_DOUBLE_EQ(v, 2.0 * 3.0 / 16.0);
  EXPECT_DOUBLE_EQ(cam.sum(), 6.0);
}

TEST(Cam, SumEqualsSingleModalLogit) {
  SingleCnn<float> m(tiny(), 8);
  m.set_training(false);
  std::mt19937_64 rng(8);
  auto out = m.forward(random_tensor<float>({1, 3, 32, 32}, rng));
  for (int c = 0; c < 4; ++c) {
    auto cam = cam_from_single(m, out, 0, c, Modality::Cfp);
    EXPECT_NEAR(cam.sum(), out.logits.data()[c], 1e-5);
  }
}

TEST(Cam, MultiModalIdentity) {
  MmCnn<float> m(tiny(), 9);
  m.set_training(false);
  std::mt19937_64 rng(9);
  auto out = m.forward(random_tensor<float>({2, 3, 32, 32}, rng), random_tensor<float>({2, 3, 32, 32}, rng));
  for (std::size_t n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c) {
      auto [f, o] = cam_from_mm(m, out, n, c);
      EXPECT_LT(std::abs(out.scores.data()[n * 4 + c] - (f.sum() + o.sum())), 1e-4);
      EXPECT_LT(std::abs(out.cfp_scores.data()[n * 4 + c] - f.sum()), 1e-4);
    }
}

TEST(Cam, ZeroOctWeightsGiveZeroOctMap) {
  MmCnn<float> m(tiny(), 10);
  const std::size_t C = m.config().channels();
  for (std::size_t i = C * 4; i < 2 * C * 4; ++i) m.head.weight.data()[i] = 0.f;
  m.set_training(false);
  std::mt19937_64 rng(10);
  auto out = m.forward(random_tensor<float>({1, 3, 32, 32}, rng), random_tensor<float>({1, 3, 32, 32}, rng));
  auto [f, o] = cam_from_mm(m, out, 0, 2);
  for (double v : o.grid) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(f.sum(), out.scores.data()[2], 1e-5);
}

TEST(Cam, GridSideIsFourteenAt448) {
  auto c = tiny(448);
  c.widths = {2, 2, 2, 2};
  c.blocks = {1, 1, 1, 1};
  EXPECT_EQ(c.feature_side(), 14u);
  SingleCnn<float> m(c, 11);
  m.set_training(false);
  NoGradGuard ng;
  std::mt19937_64 rng(11);
  auto out = m.forward(random_tensor<float>({1, 3, 448, 448}, rng));
  auto cam = cam_from_single(m, out, 0, 0, Modality::Cfp);
  EXPECT_EQ(cam.side, 14u);
  EXPECT_EQ(cam.grid.size(), 196u);
}

TEST(Overlay, ZeroCamIsUniformAndFinite) {
  RawImage img(16, 16, 1, 100);
  CamMap cam;
  cam.side = 4;
  cam.grid.assign(16, 0.0);
  auto t = render_overlay_unit(img, cam);
  for (float v : t.data()) EXPECT_TRUE(std::isfinite(v));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 256; ++i) EXPECT_EQ(t.data()[c * 256 + i], t.data()[c * 256]);
}

TEST(Overlay, HotSpotLandsInItsRegion) {
  RawImage img(16, 16, 1, 128);
  CamMap cam;
  cam.side = 4;
  cam.grid.assign(16, 0.0);
  cam.grid[1 * 4 + 2] = 5.0;  // x = 2, y = 1
  auto t = render_overlay_unit(img, cam);
  // Red channel peaks where the CAM is hottest.
  std::size_t best = 0;
  for (std::size_t i = 0; i < 256; ++i)
    if (t.data()[i] > t.data()[best]) best = i;
  const std::size_t bx = best % 16, by = best / 16;
  EXPECT_GE(bx, 8u);
  EXPECT_LT(bx, 12u);
  EXPECT_GE(by, 4u);
  EXPECT_LT(by, 8u);
  for (float v : t.data()) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

TEST(Jet, Endpoints) {
  auto lo = jet(0.0), hi = jet(1.0);
  EXPECT_GT(lo[2], lo[0]);
  EXPECT_GT(hi[0], hi[2]);
}
