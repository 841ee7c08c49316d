#pragma once

#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>
#include <openssl/rand.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "presenzia/error.hpp"
#include "presenzia/image.hpp"

namespace presenzia {

inline constexpr std::size_t kMaxImageBytes = 8u * 1024u * 1024u;

enum class ImageFormat { png, jpeg, unknown };

inline ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t png_magic[] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= 8 && std::equal(std::begin(png_magic), std::end(png_magic), bytes.begin())) return ImageFormat::png;
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return ImageFormat::jpeg;
  return ImageFormat::unknown;
}

inline RgbImage from_bgr_mat(const cv::Mat& bgr) {
  RgbImage img(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) img.set(x, y, row[x][2], row[x][1], row[x][0]);
  }
  return img;
}

inline cv::Mat to_bgr_mat(const RgbImage& img) {
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) row[x] = cv::Vec3b(img.at(x, y, 2), img.at(x, y, 1), img.at(x, y, 0));
  }
  return bgr;
}

/// Decodes PNG or JPEG (at most 8 MiB) into RGB.
inline RgbImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) fail(ErrorCode::InvalidImage, "empty image payload");
  if (bytes.size() > kMaxImageBytes) fail(ErrorCode::InvalidImage, "image payload exceeds 8 MiB");
  if (sniff_format(bytes) == ImageFormat::unknown) fail(ErrorCode::InvalidImage, "payload is neither PNG nor JPEG");
  cv::Mat decoded;
  try {
    const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    decoded = cv::imdecode(raw, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    fail(ErrorCode::InvalidImage, std::string("decoder error: ") + e.what());
  }
  if (decoded.empty() || decoded.type() != CV_8UC3) fail(ErrorCode::InvalidImage, "image could not be decoded");
  return from_bgr_mat(decoded);
}

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  require_valid(img);
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_bgr_mat(img), out)) fail(ErrorCode::IoError, "PNG encoding failed");
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
}

inline RgbImage load_image(const std::string& path) { return decode_image(read_file(path)); }
inline void save_png(const std::string& path, const RgbImage& img) { write_file(path, encode_png(img)); }

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text)
    if (c != '\n' && c != '\r' && c != ' ') clean.push_back(c);
  if (clean.size() % 4 != 0) fail(ErrorCode::ValidationError, "base64 length must be a multiple of 4");
  std::vector<std::uint8_t> out(3 * clean.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  if (n < 0) fail(ErrorCode::ValidationError, "invalid base64");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the zero bytes that stand in for '=' padding.
  if (!clean.empty() && clean.back() == '=') --len;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

// 128-bit random hex token.
inline std::string random_token() {
  unsigned char buf[16];
  if (RAND_bytes(buf, sizeof buf) != 1) fail(ErrorCode::IoError, "random source unavailable");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char b : buf) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 15]);
  }
  return out;
}

}  // namespace presenzia
