#pragma once

#include <algorithm>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "presenzia/detection.hpp"
#include "presenzia/embedding.hpp"
#include "presenzia/error.hpp"
#include "presenzia/metric_learning.hpp"
#include "presenzia/time.hpp"

namespace presenzia {

struct GalleryEntry {
  std::string person_id;
  std::vector<Embedding> embeddings;
  Timestamp enrolled_at{};
};

struct RecognitionConfig {
  std::size_t k = 3;
  double threshold = kReferenceThreshold;  // squared L2; replaced by a calibrated value in deployments

  void validate() const {
    if (k < 1) fail(ErrorCode::ValidationError, "k must be at least 1");
    if (!(threshold >= 0.0)) fail(ErrorCode::ValidationError, "threshold must be non-negative");
  }
};

struct Neighbor {
  std::string person_id;
  double distance = 0.0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct IdentificationResult {
  std::vector<Neighbor> candidates;  // the k nearest gallery embeddings, ascending
  std::optional<std::string> decision;  // nullopt == UNKNOWN

  bool unknown() const noexcept { return !decision.has_value(); }
  friend bool operator==(const IdentificationResult&, const IdentificationResult&) = default;
};

inline constexpr const char* kUnknownLabel = "UNKNOWN";

/// Hooks a caller can observe. A linear-scan gallery has no derived index, so
/// on_retrain is never invoked; enrollment changes are visible immediately.
struct GalleryHooks {
  std::function<void(const std::string& person_id)> on_change;
  std::function<void()> on_retrain;
};

/// Majority vote over neighbours: most votes, then smaller mean distance, then
/// lexicographically smaller id. UNKNOWN when the nearest distance exceeds tau.
inline IdentificationResult vote(std::vector<Neighbor> neighbors, const RecognitionConfig& config) {
  IdentificationResult result;
  std::sort(neighbors.begin(), neighbors.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.person_id < b.person_id;
  });
  if (neighbors.size() > config.k) neighbors.resize(config.k);
  result.candidates = std::move(neighbors);
  if (result.candidates.empty() || result.candidates.front().distance > config.threshold) return result;

  struct Tally {
    std::size_t votes = 0;
    double sum = 0.0;
  };
  std::map<std::string, Tally> tally;
  for (const auto& n : result.candidates) {
    auto& t = tally[n.person_id];
    ++t.votes;
    t.sum += n.distance;
  }
  const std::string* best = nullptr;
  const Tally* best_tally = nullptr;
  for (const auto& [id, t] : tally) {  // map order gives the lexicographic tie-break
    if (!best_tally || t.votes > best_tally->votes ||
        (t.votes == best_tally->votes && t.sum / t.votes < best_tally->sum / best_tally->votes)) {
      best = &id;
      best_tally = &t;
    }
  }
  result.decision = *best;
  return result;
}

/// Dynamic identity gallery with linear-scan KNN. Readers share the lock,
/// enroll/unenroll/replace take it exclusively.
class Gallery {
 public:
  Gallery() = default;
  explicit Gallery(GalleryHooks hooks) : hooks_(std::move(hooks)) {}

  GalleryEntry enroll(const std::string& person_id, std::vector<Embedding> embeddings, Timestamp at = system_now()) {
    if (person_id.empty() || person_id == kUnknownLabel)
      fail(ErrorCode::ValidationError, "person id must be non-empty and not " + std::string(kUnknownLabel));
    if (embeddings.empty()) fail(ErrorCode::ValidationError, "enrollment needs at least one embedding");
    GalleryEntry entry{person_id, std::move(embeddings), at};
    {
      std::unique_lock lock(mutex_);
      if (entries_.contains(person_id)) fail(ErrorCode::AlreadyEnrolled, person_id);
      entries_.emplace(person_id, entry);
    }
    notify(person_id);
    return entry;
  }

  void unenroll(const std::string& person_id) {
    {
      std::unique_lock lock(mutex_);
      if (entries_.erase(person_id) == 0) fail(ErrorCode::NotEnrolled, person_id);
    }
    notify(person_id);
  }

  GalleryEntry replace(const std::string& person_id, std::vector<Embedding> embeddings, Timestamp at = system_now()) {
    if (embeddings.empty()) fail(ErrorCode::ValidationError, "enrollment needs at least one embedding");
    GalleryEntry entry{person_id, std::move(embeddings), at};
    {
      std::unique_lock lock(mutex_);
      auto it = entries_.find(person_id);
      if (it == entries_.end()) fail(ErrorCode::NotEnrolled, person_id);
      it->second = entry;
    }
    notify(person_id);
    return entry;
  }

  bool contains(const std::string& person_id) const {
    std::shared_lock lock(mutex_);
    return entries_.contains(person_id);
  }

  std::optional<GalleryEntry> entry(const std::string& person_id) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(person_id);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<GalleryEntry> entries() const {
    std::shared_lock lock(mutex_);
    std::vector<GalleryEntry> out;
    for (const auto& [_, e] : entries_) out.push_back(e);
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  std::size_t embedding_count() const {
    std::shared_lock lock(mutex_);
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.embeddings.size();
    return n;
  }

  IdentificationResult identify(const Embedding& query, const RecognitionConfig& config) const {
    config.validate();
    std::vector<Neighbor> all;
    {
      std::shared_lock lock(mutex_);
      for (const auto& [id, e] : entries_)
        for (const auto& emb : e.embeddings) all.push_back({id, squared_l2_distance(query, emb)});
    }
    // Keep only the k best before the full vote sort.
    if (all.size() > config.k) {
      auto cmp = [](const Neighbor& a, const Neighbor& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.person_id < b.person_id;
      };
      std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(config.k), all.end(), cmp);
      all.resize(config.k);
    }
    return vote(std::move(all), config);
  }

  // JSON lines: {"person_id":..., "enrolled_at": ms, "embeddings": [[128]...]}
  void export_jsonl(std::ostream& out) const {
    for (const auto& e : entries()) {
      nlohmann::json j{{"person_id", e.person_id}, {"enrolled_at", to_millis(e.enrolled_at)}};
      auto arr = nlohmann::json::array();
      for (const auto& emb : e.embeddings) arr.push_back(to_json_array(emb));
      j["embeddings"] = arr;
      out << j.dump() << '\n';
    }
  }

  std::size_t import_jsonl(std::istream& in) {
    std::string line;
    std::size_t count = 0, line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ValidationError, "gallery line " + std::to_string(line_no) + ": " + e.what());
      }
      std::vector<Embedding> embs;
      for (const auto& a : j.at("embeddings")) embs.push_back(embedding_from_json(a));
      enroll(j.at("person_id").get<std::string>(), std::move(embs), from_millis(j.value("enrolled_at", 0LL)));
      ++count;
    }
    return count;
  }

 private:
  void notify(const std::string& id) const {
    if (hooks_.on_change) hooks_.on_change(id);
  }

  mutable std::shared_mutex mutex_;
  std::map<std::string, GalleryEntry> entries_;
  GalleryHooks hooks_;
};

inline IdentificationResult identify(const Embedding& query, const Gallery& gallery, const RecognitionConfig& config) {
  return gallery.identify(query, config);
}

struct FrameMatch {
  Detection detection;
  IdentificationResult identification;
};

/// detect -> crop_and_resize -> embed -> identify for every face, in detection order.
inline std::vector<FrameMatch> recognize_frame(const RgbImage& image, const FaceDetector& detector,
                                               const EmbedderBackend& embedder, const Gallery& gallery,
                                               const RecognitionConfig& config) {
  require_valid(image);
  std::vector<FrameMatch> out;
  for (const auto& det : detector.detect(image)) {
    const auto chip = crop_and_resize(image, det.box, kCanonicalChipSide);
    out.push_back({det, gallery.identify(embedder.embed(chip), config)});
  }
  return out;
}

inline nlohmann::json to_json(const IdentificationResult& r) {
  auto cands = nlohmann::json::array();
  for (const auto& c : r.candidates) cands.push_back({{"person_id", c.person_id}, {"distance", c.distance}});
  return {{"candidates", cands}, {"decision", r.decision ? *r.decision : std::string(kUnknownLabel)}};
}

}  // namespace presenzia
