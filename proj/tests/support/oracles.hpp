#pragma once

// Independent reference implementations and random generators for tests.
// Nothing here calls into the library code it is used to check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/image.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse::oracle {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

inline RawImage random_image(std::size_t w, std::size_t h, std::size_t c, std::mt19937_64& rng) {
  RawImage img(w, h, c);
  std::uniform_int_distribution<int> dist(0, 255);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(dist(rng));
  return img;
}

/// Nested-loop cross-correlation, zero padding.
inline std::vector<double> direct_conv2d(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t h,
                                         std::size_t w, const std::vector<double>& k, std::size_t oc, std::size_t kh,
                                         std::size_t kw, const std::vector<double>& bias, std::size_t stride,
                                         std::size_t pad, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * oc * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xo * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += x[((b * c + ci) * h + iy) * w + ix] * k[((o * c + ci) * kh + i) * kw + j];
              }
          out[((b * oc + o) * oh + y) * ow + xo] = acc;
        }
  return out;
}

/// Per-pixel 3x3 neighborhood sort with clamped coordinates.
inline RawImage sort_median(const RawImage& img) {
  RawImage out = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        std::vector<int> v;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const long yy = std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(img.height) - 1);
            const long xx = std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(img.width) - 1);
            v.push_back(img.at(xx, yy, c));
          }
        std::sort(v.begin(), v.end());
        out.at(x, y, c) = static_cast<std::uint8_t>(v[4]);
      }
  return out;
}

/// Global histogram equalization: round((cdf(v) - cdf_min) * 255 / (N - cdf_min)).
inline RawImage plain_equalize(const RawImage& img) {
  RawImage out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    std::array<std::size_t, 256> hist{};
    const std::size_t n = img.width * img.height;
    for (std::size_t i = 0; i < n; ++i) ++hist[img.pixels[i * img.channels + c]];
    std::array<std::size_t, 256> cdf{};
    std::size_t run = 0, cdf_min = 0;
    for (int v = 0; v < 256; ++v) {
      run += hist[v];
      cdf[v] = run;
      if (cdf_min == 0 && run > 0) cdf_min = run;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = img.pixels[i * img.channels + c];
      const double mapped =
          cdf_min == n ? v : std::round(static_cast<double>(cdf[v] - cdf_min) * 255.0 / static_cast<double>(n - cdf_min));
      out.pixels[i * img.channels + c] = static_cast<std::uint8_t>(mapped);
    }
  }
  return out;
}

struct CountedMetrics {
  std::array<double, kNumClasses> se{}, sp{}, f1{};
  double accuracy = 0.0;
};

/// One-vs-rest counts taken directly from (truth, predicted) lists.
inline CountedMetrics count_metrics(const std::vector<int>& truth, const std::vector<int>& pred) {
  CountedMetrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == pred[i];
  m.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  for (int c = 0; c < static_cast<int>(kNumClasses); ++c) {
    double tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool t = truth[i] == c, p = pred[i] == c;
      tp += t && p;
      fn += t && !p;
      tn += !t && !p;
      fp += !t && p;
    }
    const double se = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double sp = tn + fp > 0 ? tn / (tn + fp) : 0.0;
    m.se[c] = se;
    m.sp[c] = sp;
    m.f1[c] = se + sp > 0 ? 2 * se * sp / (se + sp) : 0.0;
  }
  return m;
}

struct ToyManifestOptions {
  std::size_t max_records = 100;
  double synthetic_fraction = 0.3;
  bool all_eyes_bimodal = false;
};

/// Random eyes with random class, 0-2 CFP and 0-3 OCT images each, some
/// marked synthetic. Every eye keeps a single label.
inline Manifest random_manifest(std::mt19937_64& rng, const ToyManifestOptions& opt = {}) {
  Manifest out;
  std::uniform_int_distribution<int> cls(0, 3), ncfp(0, 2), noct(0, 3);
  std::bernoulli_distribution synth(opt.synthetic_fraction);
  for (std::size_t eye = 0; out.size() < opt.max_records; ++eye) {
    const auto label = static_cast<AmdClass>(cls(rng));
    const bool synthetic = synth(rng);
    int nc = ncfp(rng), no = noct(rng);
    if (opt.all_eyes_bimodal) {
      nc = std::max(nc, 1);
      no = std::max(no, 1);
    }
    const std::string eye_id = "e" + std::to_string(eye);
    auto add = [&](Modality m, int k) {
      if (out.size() >= opt.max_records) return;
      ImageRecord r;
      r.image_id = eye_id + (m == Modality::Cfp ? "-c" : "-o") + std::to_string(k);
      r.eye_id = eye_id;
      r.subject_id = "s" + std::to_string(eye / 2);
      r.modality = m;
      r.label = label;
      r.provenance = synthetic ? Provenance::Synthetic : Provenance::Real;
      r.path = r.image_id + ".png";
      out.push_back(r);
    };
    for (int k = 0; k < nc; ++k) add(Modality::Cfp, k);
    for (int k = 0; k < no; ++k) add(Modality::Oct, k);
  }
  return out;
}

/// Explicit double loop over every (cfp, oct) record pair with equal labels.
inline std::size_t enumerate_pairs(const Manifest& m) {
  std::size_t n = 0;
  for (const auto& a : m)
    for (const auto& b : m) n += a.modality == Modality::Cfp && b.modality == Modality::Oct && a.label == b.label;
  return n;
}

}  // namespace mmfuse::oracle
