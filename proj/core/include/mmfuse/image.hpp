#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

/// 8-bit interleaved pixels, row-major, 1 or 3 channels.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  RawImage() = default;
  RawImage(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0);

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool empty() const { return pixels.empty(); }
  bool operator==(const RawImage&) const = default;
};

/// Format is chosen by extension: .png, .pgm (gray) or .ppm (RGB).
RawImage read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const RawImage& image);

/// Encodes to an in-memory PNG byte stream (deterministic for a given image).
std::vector<std::uint8_t> encode_png(const RawImage& image);

/// v -> (v / 255 - 0.5) / 0.5, laid out [c,h,w].
Tensor<float> normalize_pm1(const RawImage& image);

/// Inverse of normalize_pm1 with rounding and clamping; accepts [c,h,w] or [1,c,h,w].
RawImage denormalize_pm1(const Tensor<float>& t);

/// [c,h,w] values in [0,1] -> 8-bit image.
RawImage unit_to_image(const Tensor<float>& t);

RawImage to_grayscale(const RawImage& image);
RawImage gray_to_rgb(const RawImage& image);

/// Align-corners-false bilinear resampling on 8-bit pixels.
RawImage resize_bilinear(const RawImage& image, std::size_t width, std::size_t height);

}  // namespace mmfuse
