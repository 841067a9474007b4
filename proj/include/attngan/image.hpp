#ifndef ATTNGAN_IMAGE_HPP_
#define ATTNGAN_IMAGE_HPP_

#include <cstdint>
#include <filesystem>
#include <vector>

#include "attngan/tensor.hpp"

namespace attngan {

/// 8-bit image with interleaved channels in row-major order.
struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::int64_t channels = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::int64_t w, std::int64_t h, std::int64_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w * h * c), fill) {}

  std::uint8_t& at(std::int64_t y, std::int64_t x, std::int64_t c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }

  bool operator==(const Image8&) const = default;
};

/// Decodes a PNG keeping its channel layout (1 gray, 2 gray+alpha, 3 RGB,
/// 4 RGBA) at 8 bits. Throws IoError if unreadable, DecodeError if corrupt.
Image8 read_png(const std::filesystem::path& path);

/// Reads a PNG and requires it to be RGB without alpha.
Image8 read_png_rgb(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image8& image);

/// Area-average resampling: every output pixel is the coverage-weighted
/// mean of the source pixels under its footprint.
Image8 resize_area(const Image8& image, std::int64_t width, std::int64_t height);

inline float normalize_u8(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

/// Inverse of normalize_u8 for values in [−1, 1]: clamp, ×127.5 + 127.5, round.
std::uint8_t denormalize(float v);

/// RGB image → 3×H×W tensor in [−1, 1].
Tensor image_to_tensor(const Image8& image);

/// C×H×W or 1×C×H×W tensor in [−1, 1] → 8-bit image with C channels.
Image8 tensor_to_image(const Tensor& tensor);

/// Grayscale rendering of a [0, 1] map: pixel = round(value·255).
Image8 unit_to_gray(const Tensor& map);

}  // namespace attngan

#endif  // ATTNGAN_IMAGE_HPP_
