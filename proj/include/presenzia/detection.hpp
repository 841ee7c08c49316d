#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "presenzia/embedding.hpp"
#include "presenzia/error.hpp"
#include "presenzia/image.hpp"

namespace presenzia {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct BoundingBox {
  double x = 0.0;  // top-left
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double right() const noexcept { return x + w; }
  double bottom() const noexcept { return y + h; }
  double area() const noexcept { return w * h; }
  bool contains(Point p) const noexcept { return p.x >= x && p.x <= right() && p.y >= y && p.y <= bottom(); }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// left eye, right eye, nose, left mouth corner, right mouth corner
using FaceLandmarks = std::array<Point, 5>;

struct Detection {
  BoundingBox box;
  FaceLandmarks landmarks{};
  double probability = 0.0;
};

// Raw stage output. Coordinates are in the frame of the image handed to the predictor.
struct Candidate {
  BoundingBox box;
  double probability = 0.0;
  std::optional<FaceLandmarks> landmarks;
};

enum class Stage { proposal, refine, output };

class StagePredictor {
 public:
  virtual ~StagePredictor() = default;
  virtual Stage stage() const = 0;
  // Side of the square crops fed to refine/output, or the receptive field of the proposal net.
  virtual int input_side() const = 0;
  virtual std::vector<Candidate> predict(const RgbImage& image) const = 0;
};

struct CascadeConfig {
  std::array<double, 3> stage_thresholds{0.6, 0.7, 0.8};
  std::array<double, 3> nms_iou{0.5, 0.5, 0.5};
  double pyramid_factor = 0.709;
  double min_face = 20.0;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

namespace detail {
template <typename T>
concept Scored = requires(const T& t) {
  { t.box } -> std::convertible_to<BoundingBox>;
  { t.probability } -> std::convertible_to<double>;
};
}  // namespace detail

/// Greedy NMS: visit in descending probability (stable on input order) and keep a
/// box iff its IoU with every kept box is below the threshold.
template <detail::Scored T>
std::vector<T> non_max_suppression(std::span<const T> dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    fail(ErrorCode::ValidationError, "IoU threshold must lie in (0, 1)");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].probability > dets[b].probability; });
  std::vector<T> kept;
  for (std::size_t i : order) {
    bool suppressed = std::any_of(kept.begin(), kept.end(),
                                  [&](const T& k) { return iou(k.box, dets[i].box) >= iou_threshold; });
    if (!suppressed) kept.push_back(dets[i]);
  }
  return kept;
}

template <detail::Scored T>
std::vector<T> non_max_suppression(const std::vector<T>& dets, double iou_threshold) {
  return non_max_suppression(std::span<const T>(dets), iou_threshold);
}

struct SquareCrop {
  RgbImage pixels;
  BoundingBox region;  // square area of the source the crop depicts (may extend past the image)
};

/// Clamp the box to the image, pad the shorter side to a square by edge
/// replication (split evenly, extra pixel after), then bilinear-resize to side.
inline SquareCrop crop_square(const RgbImage& image, const BoundingBox& box, int side) {
  require_valid(image);
  if (side <= 0) fail(ErrorCode::InvalidCrop, "crop side must be positive");
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y)));
  const int x1 = std::min(image.width, static_cast<int>(std::ceil(box.right())));
  const int y1 = std::min(image.height, static_cast<int>(std::ceil(box.bottom())));
  if (!(box.w > 0.0 && box.h > 0.0) || x0 >= x1 || y0 >= y1)
    fail(ErrorCode::InvalidCrop, "box does not intersect the image");

  const int cw = x1 - x0, ch = y1 - y0;
  const int s = std::max(cw, ch);
  const int pad_left = (s - cw) / 2, pad_top = (s - ch) / 2;
  RgbImage canvas(s, s);
  for (int v = 0; v < s; ++v) {
    const int sy = std::clamp(y0 + v - pad_top, y0, y1 - 1);
    for (int u = 0; u < s; ++u) {
      const int sx = std::clamp(x0 + u - pad_left, x0, x1 - 1);
      for (int c = 0; c < 3; ++c) canvas.at(u, v, c) = image.at(sx, sy, c);
    }
  }
  return {resize_bilinear(canvas, side, side),
          BoundingBox{static_cast<double>(x0 - pad_left), static_cast<double>(y0 - pad_top), static_cast<double>(s),
                      static_cast<double>(s)}};
}

inline FaceChip crop_and_resize(const RgbImage& image, const BoundingBox& box, int side = kCanonicalChipSide) {
  return FaceChip(crop_square(image, box, side).pixels);
}

/// Three-stage coarse-to-fine detector. Predictors are immutable once built, so
/// detect() is safe to call concurrently.
class FaceDetector {
 public:
  FaceDetector(std::shared_ptr<const StagePredictor> proposal, std::shared_ptr<const StagePredictor> refine,
               std::shared_ptr<const StagePredictor> output, CascadeConfig config = {})
      : stages_{std::move(proposal), std::move(refine), std::move(output)}, config_(config) {}

  const CascadeConfig& config() const noexcept { return config_; }
  void set_config(const CascadeConfig& c) { config_ = c; }
  const StagePredictor* stage(Stage s) const noexcept { return stages_[static_cast<int>(s)].get(); }

  std::vector<double> pyramid_scales(int width, int height) const {
    const auto* p = stages_[0].get();
    const double cell = p ? p->input_side() : 12;
    std::vector<double> scales;
    double s = cell / config_.min_face;
    const double min_side = std::min(width, height);
    while (min_side * s >= cell && scales.size() < 64) {
      scales.push_back(s);
      s *= config_.pyramid_factor;
    }
    return scales;
  }

  std::vector<Detection> detect(const RgbImage& image) const {
    require_valid(image);
    for (int i = 0; i < 3; ++i) {
      if (!stages_[i]) fail(ErrorCode::BackendUnavailable, "cascade stage " + std::to_string(i + 1) + " not loaded");
      if (stages_[i]->stage() != static_cast<Stage>(i))
        fail(ErrorCode::BackendUnavailable, "cascade stage " + std::to_string(i + 1) + " has the wrong role");
    }

    // Stage 1: proposals over the image pyramid, mapped back to image coordinates.
    std::vector<Candidate> proposals;
    for (double s : pyramid_scales(image.width, image.height)) {
      const int sw = std::max(1, static_cast<int>(std::lround(image.width * s)));
      const int sh = std::max(1, static_cast<int>(std::lround(image.height * s)));
      const auto scaled = resize_bilinear(image, sw, sh);
      const double fx = static_cast<double>(image.width) / sw, fy = static_cast<double>(image.height) / sh;
      for (auto c : stages_[0]->predict(scaled)) {
        if (!(c.probability > config_.stage_thresholds[0])) continue;
        c.box = {c.box.x * fx, c.box.y * fy, c.box.w * fx, c.box.h * fy};
        if (c.landmarks)
          for (auto& p : *c.landmarks) p = {p.x * fx, p.y * fy};
        proposals.push_back(c);
      }
    }
    proposals = non_max_suppression(proposals, config_.nms_iou[0]);

    auto refined = run_crop_stage(image, proposals, 1);
    refined = non_max_suppression(refined, config_.nms_iou[1]);
    auto final_stage = run_crop_stage(image, refined, 2);
    final_stage = non_max_suppression(final_stage, config_.nms_iou[2]);

    std::vector<Detection> out;
    for (const auto& c : final_stage) {
      if (!c.landmarks) fail(ErrorCode::BackendUnavailable, "output stage returned a detection without landmarks");
      const double x0 = std::max(0.0, c.box.x), y0 = std::max(0.0, c.box.y);
      const double x1 = std::min<double>(image.width, c.box.right()), y1 = std::min<double>(image.height, c.box.bottom());
      if (x1 <= x0 || y1 <= y0) continue;
      Detection d;
      d.box = {x0, y0, x1 - x0, y1 - y0};
      d.probability = std::clamp(c.probability, 0.0, 1.0);
      for (std::size_t k = 0; k < 5; ++k)
        d.landmarks[k] = {std::clamp((*c.landmarks)[k].x, x0, x1), std::clamp((*c.landmarks)[k].y, y0, y1)};
      out.push_back(d);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Detection& a, const Detection& b) { return a.probability > b.probability; });
    return out;
  }

 private:
  std::vector<Candidate> run_crop_stage(const RgbImage& image, const std::vector<Candidate>& in, int index) const {
    const auto& predictor = *stages_[index];
    const int side = predictor.input_side();
    std::vector<Candidate> out;
    for (const auto& c : in) {
      const double s = std::max(c.box.w, c.box.h);
      const BoundingBox square{c.box.x + (c.box.w - s) / 2.0, c.box.y + (c.box.h - s) / 2.0, s, s};
      SquareCrop crop;
      try {
        crop = crop_square(image, square, side);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidCrop) continue;
        throw;
      }
      const auto preds = predictor.predict(crop.pixels);
      auto best = std::max_element(preds.begin(), preds.end(), [](const Candidate& a, const Candidate& b) {
        return a.probability < b.probability;
      });
      if (best == preds.end() || !(best->probability > config_.stage_thresholds[index])) continue;
      const double k = crop.region.w / side;
      Candidate mapped;
      mapped.probability = best->probability;
      mapped.box = {crop.region.x + best->box.x * k, crop.region.y + best->box.y * k, best->box.w * k, best->box.h * k};
      if (best->landmarks) {
        FaceLandmarks lm{};
        for (std::size_t i = 0; i < 5; ++i)
          lm[i] = {crop.region.x + (*best->landmarks)[i].x * k, crop.region.y + (*best->landmarks)[i].y * k};
        mapped.landmarks = lm;
      }
      out.push_back(mapped);
    }
    return out;
  }

  std::array<std::shared_ptr<const StagePredictor>, 3> stages_;
  CascadeConfig config_;
};

inline std::vector<Detection> detect(const RgbImage& image, const FaceDetector& detector) { return detector.detect(image); }

// --- reference cascade ----------------------------------------------------

inline constexpr std::array<Point, 5> kReferenceLandmarkFractions{
    Point{0.3, 0.35}, Point{0.7, 0.35}, Point{0.5, 0.55}, Point{0.35, 0.75}, Point{0.65, 0.75}};

/// Every stage reports the whole input as one face with probability 1.
class FullFramePredictor final : public StagePredictor {
 public:
  explicit FullFramePredictor(Stage s) : stage_(s) {}
  Stage stage() const override { return stage_; }
  int input_side() const override {
    switch (stage_) {
      case Stage::proposal: return 12;
      case Stage::refine: return 24;
      case Stage::output: return 48;
    }
    return 12;
  }
  std::vector<Candidate> predict(const RgbImage& image) const override {
    Candidate c;
    c.box = {0.0, 0.0, static_cast<double>(image.width), static_cast<double>(image.height)};
    c.probability = 1.0;
    if (stage_ == Stage::output) {
      FaceLandmarks lm{};
      for (std::size_t i = 0; i < 5; ++i)
        lm[i] = {kReferenceLandmarkFractions[i].x * image.width, kReferenceLandmarkFractions[i].y * image.height};
      c.landmarks = lm;
    }
    return {c};
  }

 private:
  Stage stage_;
};

inline FaceDetector make_reference_detector(CascadeConfig config = {}) {
  return FaceDetector(std::make_shared<FullFramePredictor>(Stage::proposal),
                      std::make_shared<FullFramePredictor>(Stage::refine),
                      std::make_shared<FullFramePredictor>(Stage::output), config);
}

// --- serialization --------------------------------------------------------

inline nlohmann::json to_json(const Detection& d) {
  nlohmann::json lm = nlohmann::json::array();
  for (const auto& p : d.landmarks) lm.push_back({p.x, p.y});
  return {{"box", {{"x", d.box.x}, {"y", d.box.y}, {"w", d.box.w}, {"h", d.box.h}}},
          {"prob", d.probability},
          {"landmarks", lm}};
}

inline Detection detection_from_json(const nlohmann::json& j) {
  Detection d;
  const auto& b = j.at("box");
  d.box = {b.at("x").get<double>(), b.at("y").get<double>(), b.at("w").get<double>(), b.at("h").get<double>()};
  d.probability = j.at("prob").get<double>();
  const auto& lm = j.at("landmarks");
  if (!lm.is_array() || lm.size() != 5) fail(ErrorCode::ValidationError, "detection needs five landmarks");
  for (std::size_t i = 0; i < 5; ++i) d.landmarks[i] = {lm[i].at(0).get<double>(), lm[i].at(1).get<double>()};
  return d;
}

}  // namespace presenzia
