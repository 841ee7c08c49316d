#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "presenzia/embedding.hpp"
#include "presenzia/error.hpp"

namespace presenzia {

inline constexpr double kDefaultMargin = 0.2;
inline constexpr double kReferenceThreshold = 1.24;

enum class TripletCategory { easy, semi_hard, hard };

constexpr std::string_view to_string(TripletCategory c) {
  switch (c) {
    case TripletCategory::easy: return "easy";
    case TripletCategory::semi_hard: return "semi_hard";
    case TripletCategory::hard: return "hard";
  }
  return "?";
}

// Hinge on squared distances. Written as (d_ap + margin) - d_an so that the
// zero-loss region is exactly d_an >= d_ap + margin in floating point.
inline double triplet_loss_from_distances(double d_ap, double d_an, double margin) {
  if (!(margin > 0.0)) fail(ErrorCode::ValidationError, "margin must be positive");
  return std::max(0.0, (d_ap + margin) - d_an);
}

inline double triplet_loss(const Embedding& a, const Embedding& p, const Embedding& n, double margin = kDefaultMargin) {
  return triplet_loss_from_distances(squared_l2_distance(a, p), squared_l2_distance(a, n), margin);
}

inline TripletCategory categorize_distances(double d_ap, double d_an, double margin) {
  if (triplet_loss_from_distances(d_ap, d_an, margin) == 0.0) return TripletCategory::easy;
  if (d_an <= d_ap) return TripletCategory::hard;
  return TripletCategory::semi_hard;
}

inline TripletCategory categorize(const Embedding& a, const Embedding& p, const Embedding& n,
                                  double margin = kDefaultMargin) {
  return categorize_distances(squared_l2_distance(a, p), squared_l2_distance(a, n), margin);
}

struct MiningConfig {
  double margin = kDefaultMargin;
  std::size_t batch_size = 32;
  bool drop_easy = false;

  void validate() const {
    if (!(margin > 0.0)) fail(ErrorCode::ValidationError, "mining margin must be positive");
    if (batch_size < 3) fail(ErrorCode::ValidationError, "mining batch size must be at least 3");
  }
};

// Batch indices of a mined triplet.
struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  double loss = 0.0;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Batch-hard online mining: every ordered anchor/positive pair gets the closest
/// different-label element as its negative (lowest index on ties).
template <std::equality_comparable Label>
std::vector<Triplet> mine_batch_hard(std::span<const Embedding> embeddings, std::span<const Label> labels,
                                     const MiningConfig& config) {
  config.validate();
  if (embeddings.size() != labels.size())
    fail(ErrorCode::ValidationError, "embeddings and labels differ in length");
  const std::size_t n = embeddings.size();

  bool has_pair = false, has_negative = false;
  for (std::size_t i = 0; i < n && !(has_pair && has_negative); ++i)
    for (std::size_t j = i + 1; j < n; ++j) (labels[i] == labels[j] ? has_pair : has_negative) = true;
  if (!has_pair) fail(ErrorCode::NoPositivePairs, "batch has no two elements sharing a label");
  if (!has_negative) fail(ErrorCode::NoNegatives, "batch contains a single label");

  const auto dist = pairwise_squared_distances(embeddings);
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t hardest = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k)
      if (!(labels[k] == labels[a]) && dist(a, k) < best) {
        best = dist(a, k);
        hardest = k;
      }
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || !(labels[p] == labels[a])) continue;
      const double loss = triplet_loss_from_distances(dist(a, p), best, config.margin);
      if (config.drop_easy && loss == 0.0) continue;
      out.push_back({a, p, hardest, loss});
    }
  }
  return out;
}

template <std::equality_comparable Label>
std::vector<Triplet> mine_batch_hard(const std::vector<Embedding>& embeddings, const std::vector<Label>& labels,
                                     const MiningConfig& config) {
  return mine_batch_hard(std::span<const Embedding>(embeddings), std::span<const Label>(labels), config);
}

/// Mines consecutive mini-batches of config.batch_size; batches that cannot form a
/// triplet are skipped. Indices in the result refer to the full input.
template <std::equality_comparable Label>
std::vector<Triplet> mine_online(std::span<const Embedding> embeddings, std::span<const Label> labels,
                                 const MiningConfig& config) {
  config.validate();
  std::vector<Triplet> out;
  for (std::size_t start = 0; start < embeddings.size(); start += config.batch_size) {
    const std::size_t len = std::min(config.batch_size, embeddings.size() - start);
    std::vector<Triplet> mined;
    try {
      mined = mine_batch_hard(embeddings.subspan(start, len), labels.subspan(start, len), config);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NoPositivePairs || e.code() == ErrorCode::NoNegatives) continue;
      throw;
    }
    for (auto t : mined) {
      t.anchor += start;
      t.positive += start;
      t.negative += start;
      out.push_back(t);
    }
  }
  return out;
}

// --- verification and threshold calibration ------------------------------

struct LabeledPair {
  Embedding a;
  Embedding b;
  bool same = false;
};

inline bool verify_pair(const Embedding& a, const Embedding& b, double threshold) {
  if (!(threshold >= 0.0)) fail(ErrorCode::ValidationError, "threshold must be non-negative");
  return squared_l2_distance(a, b) <= threshold;
}

struct CalibrationResult {
  double threshold = 0.0;
  double accuracy = 0.0;
  std::size_t num_pairs = 0;
  std::size_t candidates_evaluated = 0;
  bool degenerate = false;  // single-class input; threshold is the trivial 4.0 / 0.0
};

// A verification pair reduced to its squared distance.
struct ScoredPair {
  double distance = 0.0;
  bool same = false;
};

inline std::vector<ScoredPair> score_pairs(std::span<const LabeledPair> pairs) {
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({squared_l2_distance(p.a, p.b), p.same});
  return out;
}

inline double verification_accuracy(std::span<const ScoredPair> pairs, double threshold) {
  if (pairs.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& p : pairs) correct += ((p.distance <= threshold) == p.same) ? 1 : 0;
  return static_cast<double>(correct) / pairs.size();
}

/// Sweeps {0} U midpoints of adjacent distinct distances U {max} and keeps the
/// smallest candidate with the best accuracy. O(n log n).
inline CalibrationResult calibrate_threshold(std::span<const ScoredPair> pairs) {
  CalibrationResult r;
  r.num_pairs = pairs.size();
  const auto n_same =
      static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const ScoredPair& p) { return p.same; }));
  if (n_same == 0 || n_same == pairs.size()) {
    r.degenerate = true;
    r.threshold = n_same == 0 ? 0.0 : 4.0;
    r.accuracy = verification_accuracy(pairs, r.threshold);
    return r;
  }

  std::vector<ScoredPair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredPair& a, const ScoredPair& b) { return a.distance < b.distance; });

  // At threshold t: correct = (#same with d <= t) + (#diff with d > t).
  const std::size_t n_diff = pairs.size() - n_same;
  std::size_t same_below = 0, diff_below = 0, idx = 0;
  auto consider = [&](double t) {
    while (idx < sorted.size() && sorted[idx].distance <= t) {
      (sorted[idx].same ? same_below : diff_below) += 1;
      ++idx;
    }
    const double acc = static_cast<double>(same_below + (n_diff - diff_below)) / static_cast<double>(sorted.size());
    ++r.candidates_evaluated;
    if (r.candidates_evaluated == 1 || acc > r.accuracy) {
      r.accuracy = acc;
      r.threshold = t;
    }
  };

  consider(0.0);
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    const double lo = sorted[i].distance, hi = sorted[i + 1].distance;
    if (hi > lo) consider((lo + hi) / 2.0);
  }
  consider(sorted.back().distance);
  return r;
}

inline CalibrationResult calibrate_threshold(std::span<const LabeledPair> pairs) {
  const auto scored = score_pairs(pairs);
  return calibrate_threshold(std::span<const ScoredPair>(scored));
}

inline CalibrationResult calibrate_threshold(const std::vector<LabeledPair>& pairs) {
  return calibrate_threshold(std::span<const LabeledPair>(pairs));
}

inline CalibrationResult calibrate_threshold(const std::vector<ScoredPair>& pairs) {
  return calibrate_threshold(std::span<const ScoredPair>(pairs));
}

inline nlohmann::json to_json(const CalibrationResult& r) {
  return {{"threshold", r.threshold},
          {"accuracy", r.accuracy},
          {"num_pairs", r.num_pairs},
          {"candidates_evaluated", r.candidates_evaluated},
          {"degenerate", r.degenerate}};
}

}  // namespace presenzia
