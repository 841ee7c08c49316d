#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "presenzia/error.hpp"
#include "presenzia/image.hpp"

namespace presenzia {

inline constexpr std::size_t kEmbeddingDim = 128;
inline constexpr int kCanonicalChipSide = 220;
inline constexpr int kMinChipSide = 80;
inline constexpr int kMaxChipSide = 1024;

class Embedding;
Embedding l2_normalize(std::span<const double> v);
Embedding from_bytes_f64(std::span<const std::uint8_t> bytes);

/// A face's coordinate in the 128-d metric space. Always unit L2 norm; only
/// obtainable through l2_normalize or the deserializers that call it.
class Embedding {
 public:
  using Values = std::array<double, kEmbeddingDim>;

  const Values& values() const noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  static constexpr std::size_t size() noexcept { return kEmbeddingDim; }

  static Embedding basis(std::size_t axis) {
    Values v{};
    v.at(axis) = 1.0;
    return Embedding(v);
  }

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  explicit Embedding(const Values& v) : values_(v) {}
  Values values_{};

  friend Embedding l2_normalize(std::span<const double> v);
  friend Embedding from_bytes_f64(std::span<const std::uint8_t> bytes);
};

inline Embedding l2_normalize(std::span<const double> v) {
  if (v.size() != kEmbeddingDim)
    fail(ErrorCode::DegenerateVector, "expected 128 components, got " + std::to_string(v.size()));
  double sum = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) fail(ErrorCode::DegenerateVector, "non-finite component");
    sum += x * x;
  }
  const double norm = std::sqrt(sum);
  if (!(norm > 0.0) || !std::isfinite(norm)) fail(ErrorCode::DegenerateVector, "vector has zero or unbounded norm");
  Embedding::Values out{};
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) out[i] = v[i] / norm;
  return Embedding(out);
}

inline Embedding l2_normalize(std::span<const float> v) {
  std::vector<double> wide(v.begin(), v.end());
  return l2_normalize(std::span<const double>(wide));
}

inline double dot(const Embedding& a, const Embedding& b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) s += a[i] * b[i];
  return s;
}

inline double squared_l2_distance(const Embedding& a, const Embedding& b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Dense row-major square matrix of pairwise distances.
struct DistanceMatrix {
  std::size_t n = 0;
  std::vector<double> data;

  double operator()(std::size_t i, std::size_t j) const noexcept { return data[i * n + j]; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return data[i * n + j]; }
};

inline DistanceMatrix pairwise_squared_distances(std::span<const Embedding> es) {
  if (es.empty()) fail(ErrorCode::EmptyBatch, "pairwise distances need at least one embedding");
  DistanceMatrix m{es.size(), std::vector<double>(es.size() * es.size(), 0.0)};
  for (std::size_t i = 0; i < es.size(); ++i)
    for (std::size_t j = i + 1; j < es.size(); ++j) m(i, j) = m(j, i) = squared_l2_distance(es[i], es[j]);
  return m;
}

// --- serialization --------------------------------------------------------

inline nlohmann::json to_json_array(const Embedding& e) {
  auto arr = nlohmann::json::array();
  for (double x : e.values()) arr.push_back(x);
  return arr;
}

inline Embedding embedding_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != kEmbeddingDim)
    fail(ErrorCode::ValidationError, "embedding must be a JSON array of 128 numbers");
  std::vector<double> v;
  v.reserve(kEmbeddingDim);
  for (const auto& x : j) {
    if (!x.is_number()) fail(ErrorCode::ValidationError, "embedding component is not a number");
    v.push_back(x.get<double>());
  }
  return l2_normalize(std::span<const double>(v));
}

namespace detail {
template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<std::uint8_t, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::array<std::uint8_t, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}
}  // namespace detail

/// Wire form: 128 little-endian IEEE-754 binary32 values (512 bytes).
inline std::vector<std::uint8_t> to_bytes_f32(const Embedding& e) {
  std::vector<std::uint8_t> out;
  out.reserve(kEmbeddingDim * 4);
  for (double x : e.values()) detail::put_le(out, static_cast<float>(x));
  return out;
}

inline Embedding from_bytes_f32(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kEmbeddingDim * 4) fail(ErrorCode::ValidationError, "binary embedding must be 512 bytes");
  std::vector<double> v(kEmbeddingDim);
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) v[i] = detail::get_le<float>(bytes.data() + 4 * i);
  return l2_normalize(std::span<const double>(v));
}

// Storage form: 128 little-endian binary64 values, lossless.
inline std::vector<std::uint8_t> to_bytes_f64(const Embedding& e) {
  std::vector<std::uint8_t> out;
  out.reserve(kEmbeddingDim * 8);
  for (double x : e.values()) detail::put_le(out, x);
  return out;
}

inline Embedding from_bytes_f64(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kEmbeddingDim * 8) fail(ErrorCode::ValidationError, "binary64 embedding must be 1024 bytes");
  Embedding::Values v{};
  double sum = 0.0;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
    v[i] = detail::get_le<double>(bytes.data() + 8 * i);
    if (!std::isfinite(v[i])) fail(ErrorCode::DegenerateVector, "non-finite component");
    sum += v[i] * v[i];
  }
  // Stored values are already unit norm; keep them bit for bit.
  if (std::abs(sum - 1.0) > 1e-9) fail(ErrorCode::DegenerateVector, "stored embedding is not unit norm");
  return Embedding(v);
}

// --- face chips and embedder backends --------------------------------------

/// Square RGB face crop handed to an embedder.
class FaceChip {
 public:
  explicit FaceChip(RgbImage image) : image_(std::move(image)) {
    require_valid(image_);
    if (image_.width != image_.height) fail(ErrorCode::InvalidImage, "face chip must be square");
    if (image_.width < kMinChipSide || image_.width > kMaxChipSide)
      fail(ErrorCode::InvalidImage, "face chip side " + std::to_string(image_.width) + " outside [80, 1024]");
  }

  int side() const noexcept { return image_.width; }
  const RgbImage& image() const noexcept { return image_; }

 private:
  RgbImage image_;
};

class EmbedderBackend {
 public:
  virtual ~EmbedderBackend() = default;
  virtual std::string name() const = 0;
  virtual int input_side() const = 0;
  virtual bool deterministic() const = 0;
  virtual Embedding embed(const FaceChip& chip) const = 0;
};

inline Embedding embed(const FaceChip& chip, const EmbedderBackend& backend) { return backend.embed(chip); }

/// 64-bit linear congruential generator (Knuth MMIX constants). Each call
/// advances the state and returns the new state.
class Lcg64 {
 public:
  explicit constexpr Lcg64(std::uint64_t seed) : state_(seed) {}
  constexpr std::uint64_t next() noexcept {
    state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
    return state_;
  }
  // +1 when the top bit of the next state is clear, -1 otherwise.
  constexpr int next_sign() noexcept { return (next() >> 63) == 0 ? 1 : -1; }

 private:
  std::uint64_t state_;
};

/// Model-free deterministic embedder used by tests and the reference service
/// configuration: 16x16 area-averaged grayscale, scaled to [0,1], projected by a
/// fixed +-1 matrix plus bias drawn from Lcg64(42), then L2-normalized.
class ReferenceEmbedder final : public EmbedderBackend {
 public:
  static constexpr int kGrid = 16;
  static constexpr std::size_t kFeatures = kGrid * kGrid;
  static constexpr std::uint64_t kSeed = 42;

  ReferenceEmbedder() {
    Lcg64 rng(kSeed);
    for (auto& w : projection_) w = static_cast<std::int8_t>(rng.next_sign());
    for (auto& b : bias_) b = static_cast<std::int8_t>(rng.next_sign());
  }

  std::string name() const override { return "reference"; }
  int input_side() const override { return kGrid; }
  bool deterministic() const override { return true; }

  std::array<double, kFeatures> features(const FaceChip& chip) const {
    const auto& img = chip.image();
    auto gray = to_gray(img);
    auto cells = area_downscale(gray, img.width, img.height, kGrid, kGrid);
    std::array<double, kFeatures> f{};
    for (std::size_t i = 0; i < kFeatures; ++i) f[i] = cells[i] / 255.0;
    return f;
  }

  Embedding embed(const FaceChip& chip) const override {
    const auto f = features(chip);
    std::array<double, kEmbeddingDim> y{};
    for (std::size_t r = 0; r < kEmbeddingDim; ++r) {
      double acc = bias_[r];
      for (std::size_t c = 0; c < kFeatures; ++c) acc += projection_[r * kFeatures + c] * f[c];
      y[r] = acc;
    }
    return l2_normalize(std::span<const double>(y));
  }

  std::span<const std::int8_t> projection() const noexcept { return projection_; }
  std::span<const std::int8_t> bias() const noexcept { return bias_; }

 private:
  std::array<std::int8_t, kEmbeddingDim * kFeatures> projection_{};
  std::array<std::int8_t, kEmbeddingDim> bias_{};
};

}  // namespace presenzia
