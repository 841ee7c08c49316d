#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "presenzia/gallery.hpp"
#include "presenzia/synthetic.hpp"
#include "test_support.hpp"

using namespace presenzia;
using presenzia::testing::jitter;
using presenzia::testing::random_embedding;

namespace {

Embedding orthogonal_to_first_k(std::size_t axis) { return Embedding::basis(axis); }

// Linear scan + majority vote, written against the documented rules only.
IdentificationResult knn_oracle(const Embedding& q, const std::vector<std::pair<std::string, Embedding>>& flat,
                                std::size_t k, double tau) {
  std::vector<Neighbor> all;
  for (const auto& [id, e] : flat) all.push_back({id, presenzia::testing::loop_distance(q, e)});
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.person_id < b.person_id);
  });
  all.resize(std::min(k, all.size()));
  IdentificationResult r;
  r.candidates = all;
  if (all.empty() || all.front().distance > tau) return r;
  std::map<std::string, std::pair<int, double>> t;
  for (const auto& n : all) {
    t[n.person_id].first++;
    t[n.person_id].second += n.distance;
  }
  std::vector<std::tuple<int, double, std::string>> ranked;
  for (const auto& [id, v] : t) ranked.emplace_back(-v.first, v.second / v.first, id);
  std::sort(ranked.begin(), ranked.end());
  r.decision = std::get<2>(ranked.front());
  return r;
}

bool same_result(const IdentificationResult& a, const IdentificationResult& b) {
  if (a.decision != b.decision || a.candidates.size() != b.candidates.size()) return false;
  for (std::size_t i = 0; i < a.candidates.size(); ++i) {
    if (a.candidates[i].person_id != b.candidates[i].person_id) return false;
    if (std::abs(a.candidates[i].distance - b.candidates[i].distance) > 1e-12) return false;
  }
  return true;
}

}  // namespace

TEST(Gallery, EnrollThenIdentifyExactMatch) {
  std::mt19937_64 rng(1);
  Gallery g;
  auto e = random_embedding(rng);
  g.enroll("alice", {e});
  auto r = g.identify(e, RecognitionConfig{1, 1.24});
  ASSERT_TRUE(r.decision);
  EXPECT_EQ(*r.decision, "alice");
  EXPECT_EQ(r.candidates[0].distance, 0.0);
}

TEST(Gallery, DuplicateAndMissingIds) {
  std::mt19937_64 rng(2);
  Gallery g;
  g.enroll("a", {random_embedding(rng)});
  try {
    g.enroll("a", {random_embedding(rng)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AlreadyEnrolled);
  }
  try {
    g.unenroll("zz");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotEnrolled);
  }
  EXPECT_THROW(g.replace("zz", {random_embedding(rng)}), Error);
  EXPECT_THROW(g.enroll("b", {}), Error);
  EXPECT_THROW(g.enroll("UNKNOWN", {random_embedding(rng)}), Error);
}

TEST(Gallery, RemovedIdentityBecomesUnknown) {
  std::mt19937_64 rng(3);
  Gallery g;
  auto a = random_embedding(rng), b = random_embedding(rng);
  g.enroll("a", {a});
  g.enroll("b", {b});
  g.unenroll("a");
  auto r = g.identify(a, RecognitionConfig{3, 0.01});
  EXPECT_TRUE(r.unknown());
}

TEST(Gallery, ReplaceMovesIdentityAway) {
  std::mt19937_64 rng(4);
  Gallery g;
  auto old_e = random_embedding(rng);
  g.enroll("a", {old_e});
  auto replaced = g.replace("a", {random_embedding(rng)});
  EXPECT_EQ(replaced.person_id, "a");
  const RecognitionConfig cfg{1, 0.3};
  EXPECT_TRUE(g.identify(old_e, cfg).unknown());

  // replace == unenroll + enroll
  Gallery h;
  h.enroll("a", {old_e});
  h.unenroll("a");
  h.enroll("a", replaced.embeddings);
  auto q = random_embedding(rng);
  EXPECT_EQ(g.identify(q, cfg), h.identify(q, cfg));
}

TEST(Gallery, EmptyGalleryIsUnknown) {
  std::mt19937_64 rng(5);
  Gallery g;
  auto e = random_embedding(rng);
  g.enroll("only", {e});
  g.unenroll("only");
  auto r = g.identify(e, RecognitionConfig{});
  EXPECT_TRUE(r.unknown());
  EXPECT_TRUE(r.candidates.empty());
}

TEST(Gallery, OrthogonalQueryRejected) {
  Gallery g;
  for (std::size_t i = 0; i < 5; ++i) g.enroll("p" + std::to_string(i), {Embedding::basis(i)});
  auto r = g.identify(orthogonal_to_first_k(100), RecognitionConfig{3, 1.24});
  EXPECT_TRUE(r.unknown());
  for (const auto& c : r.candidates) EXPECT_DOUBLE_EQ(c.distance, 2.0);
}

TEST(Gallery, SyntheticGalleryMatchesLinearScanOracle) {
  std::mt19937_64 rng(6);
  Gallery g;
  std::vector<std::pair<std::string, Embedding>> flat;
  for (int p = 0; p < 5; ++p) {
    auto c = random_embedding(rng);
    std::vector<Embedding> es;
    for (int k = 0; k < 3; ++k) es.push_back(jitter(c, 0.05, rng));
    for (const auto& e : es) flat.push_back({"id" + std::to_string(p), e});
    g.enroll("id" + std::to_string(p), es);
  }
  for (int q = 0; q < 100; ++q) {
    auto query = q % 2 ? random_embedding(rng) : jitter(flat[q % flat.size()].second, 0.05, rng);
    for (std::size_t k : {1u, 3u, 5u}) {
      const RecognitionConfig cfg{k, 0.8};
      EXPECT_TRUE(same_result(g.identify(query, cfg), knn_oracle(query, flat, k, 0.8)));
    }
  }
}

TEST(Gallery, MajorityTieBreaks) {
  // Two votes each for b and c at k=4; c has the smaller mean distance.
  Gallery g;
  std::vector<double> v(kEmbeddingDim, 0.0);
  auto at = [&](double c0) {
    std::fill(v.begin(), v.end(), 0.0);
    v[0] = c0;
    v[1] = std::sqrt(1 - c0 * c0);
    return l2_normalize(std::span<const double>(v));
  };
  g.enroll("b", {at(0.99), at(0.90)});
  g.enroll("c", {at(0.98), at(0.97)});
  auto r = g.identify(Embedding::basis(0), RecognitionConfig{4, 2.0});
  ASSERT_TRUE(r.decision);
  EXPECT_EQ(*r.decision, "c");
  // Equal votes, equal means: lexicographically smaller id wins.
  Gallery h;
  h.enroll("zed", {at(0.95)});
  h.enroll("amy", {at(0.95)});
  auto r2 = h.identify(Embedding::basis(0), RecognitionConfig{2, 2.0});
  EXPECT_EQ(*r2.decision, "amy");
}

TEST(Gallery, InsertionOrderInvariance) {
  std::mt19937_64 rng(7);
  std::vector<std::pair<std::string, std::vector<Embedding>>> people;
  for (int p = 0; p < 6; ++p) people.push_back({"p" + std::to_string(p), {random_embedding(rng), random_embedding(rng)}});
  Gallery fwd, rev;
  for (const auto& [id, es] : people) fwd.enroll(id, es);
  for (auto it = people.rbegin(); it != people.rend(); ++it) rev.enroll(it->first, it->second);
  for (int q = 0; q < 50; ++q) {
    auto query = random_embedding(rng);
    EXPECT_EQ(fwd.identify(query, RecognitionConfig{3, 1.9}), rev.identify(query, RecognitionConfig{3, 1.9}));
  }
}

TEST(Gallery, DecisionNeverBeyondThreshold) {
  std::mt19937_64 rng(8);
  Gallery g;
  for (int p = 0; p < 10; ++p) g.enroll("p" + std::to_string(p), {random_embedding(rng)});
  for (int q = 0; q < 200; ++q) {
    const double tau = std::uniform_real_distribution<double>(0, 2.5)(rng);
    auto r = g.identify(random_embedding(rng), RecognitionConfig{3, tau});
    if (r.decision) { EXPECT_LE(r.candidates.front().distance, tau); }
  }
}

TEST(Gallery, HooksSeeChangesButNoRetrain) {
  int changes = 0, retrains = 0;
  Gallery g(GalleryHooks{[&](const std::string&) { ++changes; }, [&] { ++retrains; }});
  std::mt19937_64 rng(9);
  auto e = random_embedding(rng);
  g.enroll("a", {e});
  EXPECT_EQ(*g.identify(e, RecognitionConfig{}).decision, "a");
  g.unenroll("a");
  EXPECT_TRUE(g.identify(e, RecognitionConfig{}).unknown());
  EXPECT_EQ(changes, 2);
  EXPECT_EQ(retrains, 0);
}

TEST(Gallery, JsonLinesExportImport) {
  std::mt19937_64 rng(10);
  Gallery g;
  g.enroll("a", {random_embedding(rng), random_embedding(rng)}, from_millis(1000));
  g.enroll("b", {random_embedding(rng)}, from_millis(2000));
  std::stringstream ss;
  g.export_jsonl(ss);
  Gallery h;
  EXPECT_EQ(h.import_jsonl(ss), 2u);
  auto q = random_embedding(rng);
  auto rg = g.identify(q, RecognitionConfig{3, 4.0}), rh = h.identify(q, RecognitionConfig{3, 4.0});
  EXPECT_TRUE(same_result(rg, rh));
  EXPECT_EQ(h.entry("b")->enrolled_at, from_millis(2000));
}

TEST(RecognizeFrame, EnrolledImageIsRecognised) {
  auto detector = make_reference_detector();
  ReferenceEmbedder embedder;
  Gallery g;
  for (std::uint64_t id = 1; id <= 3; ++id) {
    auto img = synthetic_face(id, 0);
    auto faces = detector.detect(img);
    g.enroll("person" + std::to_string(id), {embedder.embed(crop_and_resize(img, faces[0].box))});
  }
  auto out = recognize_frame(synthetic_face(2, 0), detector, embedder, g, RecognitionConfig{1, 0.3});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].identification.decision, std::optional<std::string>("person2"));
  EXPECT_NEAR(out[0].identification.candidates[0].distance, 0.0, 1e-15);
}

TEST(RecognizeFrame, NoDetectionsGivesEmptyResult) {
  CascadeConfig cfg;
  cfg.stage_thresholds[1] = 1.01;
  auto detector = make_reference_detector(cfg);
  ReferenceEmbedder embedder;
  Gallery g;
  EXPECT_TRUE(recognize_frame(synthetic_face(1, 0), detector, embedder, g, RecognitionConfig{}).empty());
}

namespace {
class TwoFaceProposals final : public StagePredictor {
 public:
  Stage stage() const override { return Stage::proposal; }
  int input_side() const override { return 12; }
  std::vector<Candidate> predict(const RgbImage& img) const override {
    const double s = img.width / 440.0;
    return {Candidate{{0, 0, 220 * s, 220 * s}, 0.99, std::nullopt}, Candidate{{220 * s, 0, 220 * s, 220 * s}, 0.97, std::nullopt}};
  }
};
}  // namespace

TEST(RecognizeFrame, TwoFaceCompositeMatchesStepwisePipeline) {
  RgbImage composite(440, 220);
  auto left = synthetic_face(5, 0), right = synthetic_face(6, 0);
  for (int y = 0; y < 220; ++y)
    for (int x = 0; x < 220; ++x)
      for (int c = 0; c < 3; ++c) {
        composite.at(x, y, c) = left.at(x, y, c);
        composite.at(220 + x, y, c) = right.at(x, y, c);
      }
  FaceDetector detector(std::make_shared<TwoFaceProposals>(), std::make_shared<FullFramePredictor>(Stage::refine),
                        std::make_shared<FullFramePredictor>(Stage::output));
  ReferenceEmbedder embedder;
  Gallery g;
  g.enroll("five", {embedder.embed(FaceChip(left))});
  g.enroll("six", {embedder.embed(FaceChip(right))});

  const RecognitionConfig cfg{1, 0.2};
  auto out = recognize_frame(composite, detector, embedder, g, cfg);
  auto dets = detector.detect(composite);
  ASSERT_EQ(out.size(), 2u);
  ASSERT_EQ(dets.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(out[i].detection.box, dets[i].box);
    auto manual = g.identify(embedder.embed(crop_and_resize(composite, dets[i].box)), cfg);
    EXPECT_EQ(out[i].identification, manual);
  }
  EXPECT_EQ(*out[0].identification.decision, "five");
  EXPECT_EQ(*out[1].identification.decision, "six");
}
