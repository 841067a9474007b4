#include "attngan/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace attngan {

Image8 read_png(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) {
    throw IoError("cannot open " + path.string());
  }
  probe.close();

  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&png, path.string().c_str()) == 0) {
    throw DecodeError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (png.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  Image8 image;
  image.width = png.width;
  image.height = png.height;
  if (color) {
    png.format = alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
    image.channels = alpha ? 4 : 3;
  } else {
    png.format = alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY;
    image.channels = alpha ? 2 : 1;
  }
  image.pixels.resize(PNG_IMAGE_SIZE(png));
  if (png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr) == 0) {
    std::string message = png.message;
    png_image_free(&png);
    throw DecodeError("corrupt PNG " + path.string() + ": " + message);
  }
  return image;
}

Image8 read_png_rgb(const std::filesystem::path& path) {
  auto image = read_png(path);
  if (image.channels != 3) {
    throw DecodeError("expected an RGB PNG without alpha: " + path.string() + " has " +
                      std::to_string(image.channels) + " channel(s)");
  }
  return image;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  switch (image.channels) {
    case 1: png.format = PNG_FORMAT_GRAY; break;
    case 2: png.format = PNG_FORMAT_GA; break;
    case 3: png.format = PNG_FORMAT_RGB; break;
    case 4: png.format = PNG_FORMAT_RGBA; break;
    default: throw ContractError("write_png: unsupported channel count " + std::to_string(image.channels));
  }
  if (png_image_write_to_file(&png, path.string().c_str(), 0, image.pixels.data(), 0, nullptr) == 0) {
    throw IoError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

Image8 resize_area(const Image8& image, std::int64_t width, std::int64_t height) {
  if (width < 1 || height < 1) {
    throw ContractError("resize_area: target size must be positive");
  }
  if (width == image.width && height == image.height) {
    return image;
  }
  Image8 out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  std::vector<double> acc(static_cast<std::size_t>(image.channels));
  for (std::int64_t oy = 0; oy < height; ++oy) {
    const double y0 = oy * sy;
    const double y1 = y0 + sy;
    for (std::int64_t ox = 0; ox < width; ++ox) {
      const double x0 = ox * sx;
      const double x1 = x0 + sx;
      std::fill(acc.begin(), acc.end(), 0.0);
      double area = 0.0;
      for (auto iy = static_cast<std::int64_t>(y0); iy < std::min<double>(y1, image.height); ++iy) {
        const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
        if (wy <= 0.0) {
          continue;
        }
        for (auto ix = static_cast<std::int64_t>(x0); ix < std::min<double>(x1, image.width); ++ix) {
          const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
          if (wx <= 0.0) {
            continue;
          }
          const double wgt = wx * wy;
          area += wgt;
          for (std::int64_t c = 0; c < image.channels; ++c) {
            acc[c] += wgt * image.at(iy, ix, c);
          }
        }
      }
      for (std::int64_t c = 0; c < image.channels; ++c) {
        out.at(oy, ox, c) = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c] / area), 0L, 255L));
      }
    }
  }
  return out;
}

std::uint8_t denormalize(float v) {
  const float clamped = std::clamp(v, -1.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(clamped * 127.5f + 127.5f));
}

Tensor image_to_tensor(const Image8& image) {
  if (image.channels != 3) {
    throw ShapeError("image_to_tensor: expected 3 channels, got " + std::to_string(image.channels));
  }
  const auto pixels = image.width * image.height;
  std::vector<float> values(static_cast<std::size_t>(3 * pixels));
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t p = 0; p < pixels; ++p) {
      values[c * pixels + p] = normalize_u8(image.pixels[p * 3 + c]);
    }
  }
  return Tensor({3, image.height, image.width}, std::move(values));
}

Image8 tensor_to_image(const Tensor& tensor) {
  Shape s = tensor.shape();
  if (s.size() == 4 && s[0] == 1) {
    s.erase(s.begin());
  }
  if (s.size() != 3) {
    throw ShapeError("tensor_to_image: expected C×H×W, got " + shape_str(tensor.shape()));
  }
  const auto channels = s[0];
  const auto pixels = s[1] * s[2];
  Image8 image(s[2], s[1], channels);
  const auto data = tensor.data();
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t p = 0; p < pixels; ++p) {
      image.pixels[p * channels + c] = denormalize(data[c * pixels + p]);
    }
  }
  return image;
}

Image8 unit_to_gray(const Tensor& map) {
  const auto& s = map.shape();
  if (s.size() < 2) {
    throw ShapeError("unit_to_gray: expected a map with spatial dims, got " + shape_str(s));
  }
  const auto h = s[s.size() - 2];
  const auto w = s[s.size() - 1];
  if (map.numel() != h * w) {
    throw ShapeError("unit_to_gray: expected a single-channel map, got " + shape_str(s));
  }
  Image8 image(w, h, 1);
  const auto data = map.data();
  for (std::int64_t i = 0; i < h * w; ++i) {
    image.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(data[i], 0.0f, 1.0f) * 255.0f));
  }
  return image;
}

}  // namespace attngan
