#pragma once

#include <cstddef>
#include <cstdint>

#include "mmfuse/image.hpp"

namespace mmfuse {

struct ClaheParams {
  double clip_limit = 2.0;  // multiple of the uniform bin height N/256
  std::size_t tiles_x = 8;
  std::size_t tiles_y = 8;
};

/// Contrast-limited adaptive histogram equalization, applied to every channel
/// independently. Falls back to a single tile when the image is smaller than
/// the tile grid. A tile whose histogram is a single bin maps to identity.
RawImage clahe(const RawImage& image, const ClaheParams& params = {});

/// 3x3 median with clamp-to-edge borders, per channel.
RawImage median3x3(const RawImage& image);

/// CFP: CLAHE. OCT: median filter. Both return the same layout they receive.
RawImage preprocess_cfp(const RawImage& image, const ClaheParams& params = {});
RawImage preprocess_oct(const RawImage& image);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Each component is disabled when its range collapses onto the identity
/// value (crop [1,1], rotation [0,0], jitter [1,1]) or its probability is 0.
struct AugmentParams {
  Range crop_fraction{0.85, 1.0};
  double flip_probability = 0.5;
  Range rotation_degrees{-10.0, 10.0};
  Range brightness{0.9, 1.1};
  Range contrast{0.9, 1.1};
  Range saturation{0.9, 1.1};

  static AugmentParams disabled();
  void validate() const;
};

/// crop -> flip -> rotate -> jitter. Output is a pure function of the inputs;
/// the RNG is seeded from (global_seed, epoch, sample_id).
RawImage augment(const RawImage& image, const AugmentParams& params, std::uint64_t global_seed, std::uint64_t epoch,
                 std::uint64_t sample_id);

/// Individual steps, exposed for testing.
RawImage crop_resize(const RawImage& image, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);
RawImage flip_horizontal(const RawImage& image);
RawImage rotate(const RawImage& image, double degrees);

}  // namespace mmfuse
