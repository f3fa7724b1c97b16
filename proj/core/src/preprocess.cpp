#include "mmfuse/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "mmfuse/error.hpp"
#include "mmfuse/parallel.hpp"

namespace mmfuse {

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

using Lut = std::array<std::uint8_t, 256>;

Lut tile_mapping(const RawImage& img, std::size_t c, std::size_t x0, std::size_t x1, std::size_t y0, std::size_t y1,
                 double clip_limit) {
  std::array<std::size_t, 256> hist{};
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) ++hist[img.at(x, y, c)];
  }
  const std::size_t n = (x1 - x0) * (y1 - y0);
  Lut lut{};
  if (std::find(hist.begin(), hist.end(), n) != hist.end()) {
    for (std::size_t b = 0; b < 256; ++b) lut[b] = static_cast<std::uint8_t>(b);
    return lut;
  }
  const auto limit = std::max<std::size_t>(1, static_cast<std::size_t>(clip_limit * static_cast<double>(n) / 256.0));
  std::size_t excess = 0;
  for (auto& h : hist) {
    if (h > limit) {
      excess += h - limit;
      h = limit;
    }
  }
  const std::size_t share = excess / 256, remainder = excess % 256;
  for (std::size_t b = 0; b < 256; ++b) hist[b] += share + (b < remainder ? 1 : 0);

  std::size_t cdf_min = 0;
  for (auto h : hist) {
    if (h) {
      cdf_min = h;
      break;
    }
  }
  if (cdf_min == n) {
    for (std::size_t b = 0; b < 256; ++b) lut[b] = static_cast<std::uint8_t>(b);
    return lut;
  }
  std::size_t cdf = 0;
  for (std::size_t b = 0; b < 256; ++b) {
    cdf += hist[b];
    const double v = cdf < cdf_min ? 0.0 : static_cast<double>(cdf - cdf_min) * 255.0 / static_cast<double>(n - cdf_min);
    lut[b] = to_byte(v);
  }
  return lut;
}

}  // namespace

RawImage clahe(const RawImage& image, const ClaheParams& params) {
  expects(params.clip_limit >= 1.0, "clahe: clip_limit must be >= 1");
  expects(params.tiles_x > 0 && params.tiles_y > 0, "clahe: tile grid must be non-empty");
  if (image.empty()) return image;
  const std::size_t w = image.width, h = image.height;
  std::size_t tx = params.tiles_x, ty = params.tiles_y;
  if (w < tx || h < ty) tx = ty = 1;

  auto bound_x = [&](std::size_t i) { return i * w / tx; };
  auto bound_y = [&](std::size_t j) { return j * h / ty; };
  auto center_x = [&](std::size_t i) { return 0.5 * static_cast<double>(bound_x(i) + bound_x(i + 1)) - 0.5; };
  auto center_y = [&](std::size_t j) { return 0.5 * static_cast<double>(bound_y(j) + bound_y(j + 1)) - 0.5; };

  RawImage out = image;
  for (std::size_t c = 0; c < image.channels; ++c) {
    std::vector<Lut> luts(tx * ty);
    for (std::size_t j = 0; j < ty; ++j) {
      for (std::size_t i = 0; i < tx; ++i) {
        luts[j * tx + i] = tile_mapping(image, c, bound_x(i), bound_x(i + 1), bound_y(j), bound_y(j + 1), params.clip_limit);
      }
    }
    // Neighbouring tile indices and weight for one axis coordinate.
    auto locate = [](double p, std::size_t tiles, auto&& center) {
      if (tiles == 1 || p <= center(0)) return std::tuple<std::size_t, std::size_t, double>{0, 0, 0.0};
      if (p >= center(tiles - 1)) return std::tuple<std::size_t, std::size_t, double>{tiles - 1, tiles - 1, 0.0};
      std::size_t k = 0;
      while (k + 1 < tiles && center(k + 1) <= p) ++k;
      const double t = (p - center(k)) / (center(k + 1) - center(k));
      return std::tuple<std::size_t, std::size_t, double>{k, k + 1, t};
    };
    for (std::size_t y = 0; y < h; ++y) {
      const auto [j0, j1, wy] = locate(static_cast<double>(y), ty, center_y);
      for (std::size_t x = 0; x < w; ++x) {
        const auto [i0, i1, wx] = locate(static_cast<double>(x), tx, center_x);
        const auto v = image.at(x, y, c);
        const double top = (1 - wx) * luts[j0 * tx + i0][v] + wx * luts[j0 * tx + i1][v];
        const double bottom = (1 - wx) * luts[j1 * tx + i0][v] + wx * luts[j1 * tx + i1][v];
        out.at(x, y, c) = to_byte((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

RawImage median3x3(const RawImage& image) {
  RawImage out = image;
  const auto w = static_cast<long>(image.width), h = static_cast<long>(image.height);
  std::array<std::uint8_t, 9> window{};
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        std::size_t k = 0;
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dx = -1; dx <= 1; ++dx) {
            const auto sx = static_cast<std::size_t>(std::clamp(x + dx, 0L, w - 1));
            const auto sy = static_cast<std::size_t>(std::clamp(y + dy, 0L, h - 1));
            window[k++] = image.at(sx, sy, c);
          }
        }
        std::nth_element(window.begin(), window.begin() + 4, window.end());
        out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) = window[4];
      }
    }
  }
  return out;
}

RawImage preprocess_cfp(const RawImage& image, const ClaheParams& params) { return clahe(image, params); }

RawImage preprocess_oct(const RawImage& image) { return median3x3(image); }

AugmentParams AugmentParams::disabled() {
  AugmentParams p;
  p.crop_fraction = {1.0, 1.0};
  p.flip_probability = 0.0;
  p.rotation_degrees = {0.0, 0.0};
  p.brightness = p.contrast = p.saturation = {1.0, 1.0};
  return p;
}

void AugmentParams::validate() const {
  auto ordered = [](Range r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi; };
  expects(ordered(crop_fraction) && crop_fraction.lo > 0.0, "augment: crop fraction range must be ordered and positive");
  expects(crop_fraction.hi <= 1.0, "augment: crop fraction above 1 would exceed the image");
  expects(flip_probability >= 0.0 && flip_probability <= 1.0, "augment: flip probability must be in [0,1]");
  expects(ordered(rotation_degrees), "augment: rotation range must be ordered");
  for (auto r : {brightness, contrast, saturation}) {
    expects(ordered(r) && r.lo >= 0.0, "augment: jitter ranges must be ordered and non-negative");
  }
}

RawImage crop_resize(const RawImage& image, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  expects(w > 0 && h > 0 && x0 + w <= image.width && y0 + h <= image.height,
          "crop window exceeds the image bounds");
  RawImage crop(w, h, image.channels);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) crop.at(x, y, c) = image.at(x0 + x, y0 + y, c);
    }
  }
  return resize_bilinear(crop, image.width, image.height);
}

RawImage flip_horizontal(const RawImage& image) {
  RawImage out = image;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
    }
  }
  return out;
}

RawImage rotate(const RawImage& image, double degrees) {
  if (degrees == 0.0) return image;
  RawImage out(image.width, image.height, image.channels);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cx = 0.5 * static_cast<double>(image.width) - 0.5, cy = 0.5 * static_cast<double>(image.height) - 0.5;
  const auto w = static_cast<long>(image.width), h = static_cast<long>(image.height);
  auto sample = [&](long x, long y, std::size_t c) -> double {
    return (x < 0 || y < 0 || x >= w || y >= h) ? 0.0
                                                : image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c);
  };
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      // inverse map: output pixel -> source location
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = cs * dx + sn * dy + cx, sy = -sn * dx + cs * dy + cy;
      const auto x0 = static_cast<long>(std::floor(sx)), y0 = static_cast<long>(std::floor(sy));
      const double tx = sx - static_cast<double>(x0), ty = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = (1 - tx) * sample(x0, y0, c) + tx * sample(x0 + 1, y0, c);
        const double bottom = (1 - tx) * sample(x0, y0 + 1, c) + tx * sample(x0 + 1, y0 + 1, c);
        out.at(x, y, c) = to_byte((1 - ty) * top + ty * bottom);
      }
    }
  }
  return out;
}

namespace {

RawImage jitter(const RawImage& image, double brightness, double contrast, double saturation) {
  if (brightness == 1.0 && contrast == 1.0 && saturation == 1.0) return image;
  const std::size_t n = image.width * image.height, ch = image.channels;
  std::vector<double> v(image.pixels.begin(), image.pixels.end());
  for (auto& p : v) p *= brightness;
  auto luma = [&](std::size_t p) {
    return ch == 1 ? v[p] : 0.299 * v[3 * p] + 0.587 * v[3 * p + 1] + 0.114 * v[3 * p + 2];
  };
  if (contrast != 1.0) {
    double mean = 0.0;
    for (std::size_t p = 0; p < n; ++p) mean += luma(p);
    mean /= static_cast<double>(n);
    for (auto& p : v) p = (p - mean) * contrast + mean;
  }
  if (saturation != 1.0 && ch == 3) {
    for (std::size_t p = 0; p < n; ++p) {
      const double g = luma(p);
      for (std::size_t c = 0; c < 3; ++c) v[3 * p + c] = g + (v[3 * p + c] - g) * saturation;
    }
  }
  RawImage out = image;
  for (std::size_t i = 0; i < v.size(); ++i) out.pixels[i] = to_byte(v[i]);
  return out;
}

double draw(Rng& rng, Range r) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return r.lo + (r.hi - r.lo) * u;
}

}  // namespace

RawImage augment(const RawImage& image, const AugmentParams& params, std::uint64_t global_seed, std::uint64_t epoch,
                 std::uint64_t sample_id) {
  params.validate();
  Rng rng(derive_seed({global_seed, epoch, sample_id}));
  // Every draw happens unconditionally so the stream layout never depends on which steps are enabled.
  const double fraction = draw(rng, params.crop_fraction);
  const double ox = draw(rng, {0.0, 1.0}), oy = draw(rng, {0.0, 1.0});
  const bool flip = draw(rng, {0.0, 1.0}) < params.flip_probability;
  const double angle = draw(rng, params.rotation_degrees);
  const double b = draw(rng, params.brightness), c = draw(rng, params.contrast), s = draw(rng, params.saturation);

  RawImage out = image;
  if (fraction < 1.0) {
    const auto cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * image.width)));
    const auto chh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * image.height)));
    const auto x0 = static_cast<std::size_t>(ox * static_cast<double>(image.width - cw) + 0.5);
    const auto y0 = static_cast<std::size_t>(oy * static_cast<double>(image.height - chh) + 0.5);
    out = crop_resize(out, x0, y0, cw, chh);
  }
  if (flip) out = flip_horizontal(out);
  out = rotate(out, angle);
  return jitter(out, b, c, s);
}

}  // namespace mmfuse
