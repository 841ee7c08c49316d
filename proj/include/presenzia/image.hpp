#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "presenzia/error.hpp"

namespace presenzia {

// Row-major interleaved 8-bit RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0) * 3, fill) {}

  bool empty() const noexcept { return width <= 0 || height <= 0; }

  std::size_t offset(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * 3;
  }
  std::uint8_t at(int x, int y, int c) const noexcept { return pixels[offset(x, y) + c]; }
  std::uint8_t& at(int x, int y, int c) noexcept { return pixels[offset(x, y) + c]; }

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept {
    auto o = offset(x, y);
    pixels[o] = r;
    pixels[o + 1] = g;
    pixels[o + 2] = b;
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

inline void require_valid(const RgbImage& image) {
  if (image.empty()) fail(ErrorCode::InvalidImage, "image has zero area");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    fail(ErrorCode::InvalidImage, "pixel buffer does not match dimensions");
}

inline std::uint8_t saturate_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Bilinear resize with half-pixel centres; an identity-sized resize returns the input unchanged.
inline RgbImage resize_bilinear(const RgbImage& src, int out_w, int out_h) {
  require_valid(src);
  if (out_w <= 0 || out_h <= 0) fail(ErrorCode::InvalidImage, "target size must be positive");
  if (out_w == src.width && out_h == src.height) return src;

  RgbImage dst(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, src.height - 1);
    double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, src.width - 1);
      double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        double top = src.at(x0, y0, c) * (1.0 - wx) + src.at(x1, y0, c) * wx;
        double bottom = src.at(x0, y1, c) * (1.0 - wx) + src.at(x1, y1, c) * wx;
        dst.at(x, y, c) = saturate_u8(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  return dst;
}

// Exact area-weighted downscale of a single-channel plane; each output cell is the
// coverage-weighted mean of the source pixels it overlaps.
inline std::vector<double> area_downscale(std::span<const double> plane, int w, int h, int out_w, int out_h) {
  std::vector<double> out(static_cast<std::size_t>(out_w) * out_h, 0.0);
  const double sx = static_cast<double>(w) / out_w;
  const double sy = static_cast<double>(h) / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    const double y_begin = oy * sy, y_end = (oy + 1) * sy;
    for (int ox = 0; ox < out_w; ++ox) {
      const double x_begin = ox * sx, x_end = (ox + 1) * sx;
      double acc = 0.0, weight = 0.0;
      for (int y = static_cast<int>(std::floor(y_begin)); y < std::min(h, static_cast<int>(std::ceil(y_end))); ++y) {
        const double wy = std::min<double>(y + 1, y_end) - std::max<double>(y, y_begin);
        if (wy <= 0.0) continue;
        for (int x = static_cast<int>(std::floor(x_begin)); x < std::min(w, static_cast<int>(std::ceil(x_end))); ++x) {
          const double wx = std::min<double>(x + 1, x_end) - std::max<double>(x, x_begin);
          if (wx <= 0.0) continue;
          acc += plane[static_cast<std::size_t>(y) * w + x] * wx * wy;
          weight += wx * wy;
        }
      }
      out[static_cast<std::size_t>(oy) * out_w + ox] = acc / weight;
    }
  }
  return out;
}

// ITU-R BT.601 luma in [0, 255].
inline std::vector<double> to_gray(const RgbImage& image) {
  std::vector<double> gray(static_cast<std::size_t>(image.width) * image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      gray[static_cast<std::size_t>(y) * image.width + x] =
          0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
  return gray;
}

}  // namespace presenzia
