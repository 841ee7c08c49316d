#pragma once

#include <cstdint>
#include <random>

#include "presenzia/image.hpp"

namespace presenzia {

/// Deterministic stand-in faces for desk-scale tests and demos. An identity is a
/// 16x16 grid of high/low cells drawn from identity_seed; a variant flips each
/// cell with flip_prob and adds uniform pixel noise of +-noise, both drawn from
/// variant_seed. variant_seed == 0 yields the clean identity image.
struct SyntheticFaceOptions {
  int side = 220;
  double flip_prob = 0.08;
  int noise = 12;
};

inline RgbImage synthetic_face(std::uint64_t identity_seed, std::uint64_t variant_seed,
                               const SyntheticFaceOptions& opt = {}) {
  constexpr int kGrid = 16;
  std::mt19937_64 id_rng(identity_seed * 0x9E3779B97F4A7C15ULL + 1);
  bool cells[kGrid][kGrid];
  std::uint8_t tint[3];
  for (auto& row : cells)
    for (auto& c : row) c = (id_rng() >> 63) != 0;
  for (auto& t : tint) t = static_cast<std::uint8_t>(id_rng() % 40);

  std::mt19937_64 var_rng(variant_seed * 0xBF58476D1CE4E5B9ULL + 7);
  auto uniform = [&] { return static_cast<double>(var_rng() >> 11) * 0x1.0p-53; };
  if (variant_seed != 0)
    for (auto& row : cells)
      for (auto& c : row)
        if (uniform() < opt.flip_prob) c = !c;

  RgbImage img(opt.side, opt.side);
  for (int y = 0; y < opt.side; ++y) {
    const int cy = y * kGrid / opt.side;
    for (int x = 0; x < opt.side; ++x) {
      const int cx = x * kGrid / opt.side;
      const int base = cells[cy][cx] ? 210 : 45;
      for (int c = 0; c < 3; ++c) {
        int v = base + tint[c] - 20;
        if (variant_seed != 0 && opt.noise > 0)
          v += static_cast<int>(var_rng() % static_cast<std::uint64_t>(2 * opt.noise + 1)) - opt.noise;
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
      }
    }
  }
  return img;
}

}  // namespace presenzia
