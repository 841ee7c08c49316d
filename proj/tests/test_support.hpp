#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "presenzia/embedding.hpp"

namespace presenzia::testing {

inline std::vector<double> random_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(kEmbeddingDim);
  for (auto& x : v) x = g(rng);
  return v;
}

inline Embedding random_embedding(std::mt19937_64& rng) {
  auto v = random_vector(rng);
  return l2_normalize(std::span<const double>(v));
}

// centre + sigma * gaussian noise, renormalized.
inline Embedding jitter(const Embedding& centre, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<double> v(kEmbeddingDim);
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) v[i] = centre[i] + g(rng);
  return l2_normalize(std::span<const double>(v));
}

// Kahan-compensated norm, independent of the library's plain accumulation.
inline double compensated_norm(const std::vector<double>& v) {
  double sum = 0.0, c = 0.0;
  for (double x : v) {
    double y = x * x - c;
    double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
  return std::sqrt(sum);
}

inline double loop_distance(const Embedding& a, const Embedding& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline std::string temp_path(const std::string& name) {
  static std::mt19937_64 rng(std::random_device{}());
  return "/tmp/presenzia_test_" + std::to_string(rng()) + "_" + name;
}

}  // namespace presenzia::testing
