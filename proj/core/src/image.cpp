#include "mmfuse/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) { throw Error(std::string("png: ") + msg); }

void png_warning_fn(png_structp, png_const_charp) {}

RawImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw Error("cannot open image " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  struct Cleanup {
    png_structp* p;
    png_infop* i;
    ~Cleanup() { png_destroy_read_struct(p, i, nullptr); }
  } cleanup{&png, &info};
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  RawImage img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3) throw Error("unsupported channel count in " + path.string());
  img.pixels.resize(img.width * img.height * img.channels);
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return img;
}

RawImage read_pnm(const std::filesystem::path& path, std::size_t channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  const std::string expected = channels == 1 ? "P5" : "P6";
  if (magic != expected) throw Error(path.string() + ": expected binary " + expected + " header");
  auto next_int = [&]() {
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      long v = -1;
      in >> v;
      if (!in || v <= 0) throw Error(path.string() + ": malformed header");
      return static_cast<std::size_t>(v);
    }
  };
  RawImage img;
  img.width = next_int();
  img.height = next_int();
  if (next_int() != 255) throw Error(path.string() + ": only maxval 255 is supported");
  in.get();
  img.channels = channels;
  img.pixels.resize(img.width * img.height * channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw Error(path.string() + ": truncated pixel data");
  return img;
}

}  // namespace

RawImage::RawImage(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill)
    : width(w), height(h), channels(c), pixels(w * h * c, fill) {
  expects(c == 1 || c == 3, "image channels must be 1 or 3");
}

RawImage read_image(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pnm(path, 1);
  if (ext == ".ppm") return read_pnm(path, 3);
  throw Error("unsupported image format: " + path.string());
}

std::vector<std::uint8_t> encode_png(const RawImage& image) {
  expects(!image.empty() && (image.channels == 1 || image.channels == 3), "encode_png: empty or invalid image");
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  struct Cleanup {
    png_structp* p;
    png_infop* i;
    ~Cleanup() { png_destroy_write_struct(p, i); }
  } cleanup{&png, &info};
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y) {
    png_write_row(png, image.pixels.data() + y * image.width * image.channels);
  }
  png_write_end(png, nullptr);
  return out;
}

void write_image(const std::filesystem::path& path, const RawImage& image) {
  const auto ext = lower_extension(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image " + path.string());
  if (ext == ".png") {
    auto bytes = encode_png(image);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  } else if (ext == ".pgm" || ext == ".ppm") {
    const std::size_t want = ext == ".pgm" ? 1 : 3;
    if (image.channels != want) throw Error(path.string() + ": channel count does not match extension");
    out << (want == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  } else {
    throw Error("unsupported image format: " + path.string());
  }
  if (!out) throw Error("failed writing " + path.string());
}

Tensor<float> normalize_pm1(const RawImage& image) {
  expects(!image.empty(), "normalize_pm1: empty image");
  const std::size_t c = image.channels, hw = image.width * image.height;
  std::vector<float> out(c * hw);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t k = 0; k < c; ++k) {
      const double v = image.pixels[p * c + k] / 255.0;
      out[k * hw + p] = static_cast<float>((v - 0.5) / 0.5);
    }
  }
  return Tensor<float>({c, image.height, image.width}, std::move(out));
}

namespace {
RawImage planar_to_image(const Tensor<float>& t, double (*to_unit)(float)) {
  const auto& s = t.shape();
  expects((s.size() == 3 || (s.size() == 4 && s[0] == 1)) && (s[s.size() - 3] == 1 || s[s.size() - 3] == 3),
          "expected a [c,h,w] tensor with 1 or 3 channels, got " + shape_str(s));
  const std::size_t c = s[s.size() - 3], h = s[s.size() - 2], w = s[s.size() - 1];
  RawImage img(w, h, c);
  auto d = t.data();
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t p = 0; p < h * w; ++p) img.pixels[p * c + k] = to_byte(255.0 * to_unit(d[k * h * w + p]));
  }
  return img;
}
}  // namespace

RawImage denormalize_pm1(const Tensor<float>& t) {
  return planar_to_image(t, [](float v) { return 0.5 * v + 0.5; });
}

RawImage unit_to_image(const Tensor<float>& t) {
  return planar_to_image(t, [](float v) { return static_cast<double>(v); });
}

RawImage to_grayscale(const RawImage& image) {
  if (image.channels == 1) return image;
  RawImage out(image.width, image.height, 1);
  for (std::size_t p = 0; p < image.width * image.height; ++p) {
    const auto* px = &image.pixels[p * 3];
    out.pixels[p] = to_byte(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
  }
  return out;
}

RawImage gray_to_rgb(const RawImage& image) {
  if (image.channels == 3) return image;
  RawImage out(image.width, image.height, 3);
  for (std::size_t p = 0; p < image.width * image.height; ++p) {
    out.pixels[3 * p] = out.pixels[3 * p + 1] = out.pixels[3 * p + 2] = image.pixels[p];
  }
  return out;
}

RawImage resize_bilinear(const RawImage& image, std::size_t width, std::size_t height) {
  expects(width > 0 && height > 0 && !image.empty(), "resize_bilinear: empty input or output");
  if (width == image.width && height == image.height) return image;
  RawImage out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / width, sy = static_cast<double>(image.height) / height;
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = (1 - tx) * image.at(x0, y0, c) + tx * image.at(x1, y0, c);
        const double bottom = (1 - tx) * image.at(x0, y1, c) + tx * image.at(x1, y1, c);
        out.at(x, y, c) = to_byte((1 - ty) * top + ty * bottom);
      }
    }
  }
  return out;
}

}  // namespace mmfuse
