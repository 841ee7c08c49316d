#include <gtest/gtest.h>

#include <random>

#include "presenzia/detection.hpp"
#include "presenzia/synthetic.hpp"

using namespace presenzia;

namespace {

Detection make_det(double x, double y, double w, double h, double p) {
  Detection d;
  d.box = {x, y, w, h};
  d.probability = p;
  return d;
}

// Greedy NMS characterised without the greedy loop: a subset S (in probability
// order) is the NMS output iff each element is in S exactly when it overlaps no
// earlier member of S below threshold. Enumerate every subset and require that
// exactly one satisfies the fixpoint.
std::vector<Detection> subset_oracle(std::vector<Detection> dets, double t) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.probability > b.probability; });
  const std::size_t n = dets.size();
  std::vector<std::uint32_t> fixpoints;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      bool clear = true;
      for (std::size_t j = 0; j < i; ++j)
        if ((mask >> j & 1u) && iou(dets[i].box, dets[j].box) >= t) clear = false;
      ok = ((mask >> i & 1u) != 0) == clear;
    }
    if (ok) fixpoints.push_back(mask);
  }
  EXPECT_EQ(fixpoints.size(), 1u);
  std::vector<Detection> out;
  for (std::size_t i = 0; i < n; ++i)
    if (fixpoints.front() >> i & 1u) out.push_back(dets[i]);
  return out;
}

bool same_boxes(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i].box == b[i].box) || a[i].probability != b[i].probability) return false;
  return true;
}

// Proposal stage returning fixed boxes in the coordinates of whatever image it sees.
class FixedProposals final : public StagePredictor {
 public:
  FixedProposals(int base_w, std::vector<Candidate> boxes) : base_w_(base_w), boxes_(std::move(boxes)) {}
  Stage stage() const override { return Stage::proposal; }
  int input_side() const override { return 12; }
  std::vector<Candidate> predict(const RgbImage& img) const override {
    const double s = static_cast<double>(img.width) / base_w_;
    std::vector<Candidate> out;
    for (auto c : boxes_) {
      c.box = {c.box.x * s, c.box.y * s, c.box.w * s, c.box.h * s};
      out.push_back(c);
    }
    return out;
  }

 private:
  int base_w_;
  std::vector<Candidate> boxes_;
};

FaceDetector detector_with(std::vector<Candidate> proposals, int width) {
  return FaceDetector(std::make_shared<FixedProposals>(width, std::move(proposals)),
                      std::make_shared<FullFramePredictor>(Stage::refine),
                      std::make_shared<FullFramePredictor>(Stage::output));
}

}  // namespace

TEST(Iou, BasicCases) {
  BoundingBox a{0, 0, 10, 10};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, {10, 0, 10, 10}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, {5, 0, 10, 10}), 50.0 / 150.0);
}

TEST(Nms, SingleDetectionKept) {
  std::vector<Detection> one{make_det(1, 2, 3, 4, 0.5)};
  auto out = non_max_suppression(one, 0.5);
  EXPECT_TRUE(same_boxes(out, one));
}

TEST(Nms, IdenticalBoxesKeepHigher) {
  std::vector<Detection> two{make_det(0, 0, 10, 10, 0.8), make_det(0, 0, 10, 10, 0.9)};
  auto out = non_max_suppression(two, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].probability, 0.9);
}

TEST(Nms, EmptyInputAndThresholdRange) {
  std::vector<Detection> none;
  EXPECT_TRUE(non_max_suppression(none, 0.5).empty());
  EXPECT_THROW(non_max_suppression(none, 0.0), Error);
  EXPECT_THROW(non_max_suppression(none, 1.0), Error);
}

TEST(Nms, MatchesSubsetOracleOnRandomBoxes) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> pos(0, 60), size(5, 40), prob(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Detection> dets;
    for (int i = 0; i < 10; ++i) dets.push_back(make_det(pos(rng), pos(rng), size(rng), size(rng), prob(rng)));
    for (double t : {0.3, 0.5, 0.7}) {
      auto out = non_max_suppression(dets, t);
      EXPECT_TRUE(same_boxes(out, subset_oracle(dets, t))) << "trial " << trial << " t " << t;
      for (std::size_t i = 0; i + 1 < out.size(); ++i) EXPECT_GE(out[i].probability, out[i + 1].probability);
      for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = i + 1; j < out.size(); ++j) EXPECT_LT(iou(out[i].box, out[j].box), t);
    }
  }
}

TEST(CropAndResize, IdentityCrop) {
  auto img = synthetic_face(4, 9);
  auto chip = crop_and_resize(img, {0, 0, 220, 220}, 220);
  EXPECT_EQ(chip.image(), img);
}

TEST(CropAndResize, ResizesToRequestedSide) {
  auto img = synthetic_face(4, 9);
  auto chip = crop_and_resize(img, {20, 30, 100, 100}, 220);
  EXPECT_EQ(chip.side(), 220);
}

TEST(CropAndResize, OffEdgeMatchesClampThenResizeOracle) {
  RgbImage img(60, 40);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 60; ++x) img.set(x, y, static_cast<std::uint8_t>(x * 4), static_cast<std::uint8_t>(y * 6), 77);
  const BoundingBox box{40, -10, 50, 30};  // clamps to x in [40,60), y in [0,20): 20x20, already square

  RgbImage clamped(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x)
      for (int c = 0; c < 3; ++c) clamped.at(x, y, c) = img.at(40 + x, y, c);
  auto oracle = resize_bilinear(clamped, 96, 96);
  auto crop = crop_square(img, box, 96);
  EXPECT_EQ(crop.pixels, oracle);

  // Non-square clamp: 20 wide x 10 tall, padded vertically by edge replication (5 rows each side).
  const BoundingBox wide{40, -10, 50, 20};
  RgbImage padded(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x)
      for (int c = 0; c < 3; ++c) padded.at(x, y, c) = img.at(40 + x, std::clamp(y - 5, 0, 9), c);
  auto crop2 = crop_square(img, wide, 96);
  EXPECT_EQ(crop2.pixels, resize_bilinear(padded, 96, 96));
  EXPECT_EQ(crop2.region, (BoundingBox{40, -5, 20, 20}));
}

TEST(CropAndResize, OutsideImageThrows) {
  RgbImage img(50, 50);
  try {
    crop_and_resize(img, {60, 60, 10, 10});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidCrop);
  }
}

TEST(ReferenceDetector, BlankImageGivesFullFrame) {
  auto det = make_reference_detector();
  RgbImage blank(220, 220, 0);
  auto out = detect(blank, det);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].probability, 1.0);
  EXPECT_NEAR(out[0].box.x, 0.0, 1e-9);
  EXPECT_NEAR(out[0].box.y, 0.0, 1e-9);
  EXPECT_NEAR(out[0].box.w, 220.0, 1e-9);
  EXPECT_NEAR(out[0].box.h, 220.0, 1e-9);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_TRUE(out[0].box.contains(out[0].landmarks[i]));
    EXPECT_NEAR(out[0].landmarks[i].x, kReferenceLandmarkFractions[i].x * 220.0, 1e-6);
    EXPECT_NEAR(out[0].landmarks[i].y, kReferenceLandmarkFractions[i].y * 220.0, 1e-6);
  }
}

TEST(ReferenceDetector, NonSquareImageCoversFrame) {
  auto det = make_reference_detector();
  RgbImage img(320, 240, 90);
  auto out = det.detect(img);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].box.w, 320.0, 1e-9);
  EXPECT_NEAR(out[0].box.h, 240.0, 1e-9);
  for (const auto& p : out[0].landmarks) EXPECT_TRUE(out[0].box.contains(p));
}

TEST(ReferenceDetector, StageTwoThresholdAboveOneRejectsAll) {
  CascadeConfig cfg;
  cfg.stage_thresholds[1] = 1.01;
  auto det = make_reference_detector(cfg);
  EXPECT_TRUE(det.detect(synthetic_face(1, 0)).empty());
}

TEST(ReferenceDetector, Idempotent) {
  auto det = make_reference_detector();
  auto img = synthetic_face(2, 3);
  auto a = det.detect(img), b = det.detect(img);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].box, b[i].box);
    EXPECT_EQ(a[i].landmarks, b[i].landmarks);
  }
}

TEST(Cascade, ErrorsForMissingStageAndEmptyImage) {
  FaceDetector broken(std::make_shared<FullFramePredictor>(Stage::proposal), nullptr,
                      std::make_shared<FullFramePredictor>(Stage::output));
  try {
    broken.detect(RgbImage(50, 50));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
  }
  auto det = make_reference_detector();
  try {
    det.detect(RgbImage());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidImage);
  }
}

TEST(Cascade, SeparatedProposalsBothSurviveOverlappingCollapse) {
  RgbImage img(300, 200, 128);
  Candidate left{{20, 40, 80, 80}, 0.95, std::nullopt};
  Candidate right{{180, 50, 80, 80}, 0.9, std::nullopt};
  auto det = detector_with({left, right}, 300);
  auto out = det.detect(img);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[0].box.x, 20, 1e-6);
  EXPECT_NEAR(out[1].box.x, 180, 1e-6);

  Candidate overlap{{25, 42, 80, 80}, 0.85, std::nullopt};
  auto det2 = detector_with({left, overlap}, 300);
  auto out2 = det2.detect(img);
  ASSERT_EQ(out2.size(), 1u);

  // Cross-check the cascade's stage-1 survivors with the subset oracle.
  std::vector<Detection> raw{make_det(20, 40, 80, 80, 0.95), make_det(25, 42, 80, 80, 0.85)};
  EXPECT_EQ(subset_oracle(raw, 0.5).size(), out2.size());
}

TEST(Cascade, PyramidFollowsFactorAndMinFace) {
  auto det = make_reference_detector();
  auto scales = det.pyramid_scales(220, 220);
  ASSERT_FALSE(scales.empty());
  EXPECT_DOUBLE_EQ(scales[0], 12.0 / 20.0);
  for (std::size_t i = 1; i < scales.size(); ++i) EXPECT_NEAR(scales[i] / scales[i - 1], 0.709, 1e-12);
  EXPECT_GE(220 * scales.back(), 12.0);
  EXPECT_LT(220 * scales.back() * 0.709, 12.0);
}

TEST(DetectionJson, RoundTrip) {
  auto det = make_reference_detector();
  auto d = det.detect(RgbImage(220, 220))[0];
  auto j = to_json(d);
  EXPECT_TRUE(j.contains("box"));
  EXPECT_EQ(j["landmarks"].size(), 5u);
  auto back = detection_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.box, d.box);
  EXPECT_EQ(back.probability, d.probability);
}
