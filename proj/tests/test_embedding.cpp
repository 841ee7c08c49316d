#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "presenzia/embedding.hpp"
#include "presenzia/synthetic.hpp"
#include "test_support.hpp"

using namespace presenzia;
using presenzia::testing::compensated_norm;
using presenzia::testing::loop_distance;
using presenzia::testing::random_embedding;
using presenzia::testing::random_vector;

namespace {

std::vector<double> padded(std::initializer_list<double> head) {
  std::vector<double> v(kEmbeddingDim, 0.0);
  std::copy(head.begin(), head.end(), v.begin());
  return v;
}

RgbImage uniform_image(int side, std::uint8_t value) { return RgbImage(side, side, value); }
RgbImage synthetic_chip() { return synthetic_face(3, 0); }

}  // namespace

TEST(L2Normalize, ScalesNormFiveVector) {
  auto v = padded({3.0, 4.0});
  auto e = l2_normalize(std::span<const double>(v));
  EXPECT_DOUBLE_EQ(e[0], 0.6);
  EXPECT_DOUBLE_EQ(e[1], 0.8);
  for (std::size_t i = 2; i < kEmbeddingDim; ++i) EXPECT_EQ(e[i], 0.0);
}

TEST(L2Normalize, UnitBasisUnchanged) {
  auto v = padded({1.0});
  EXPECT_EQ(l2_normalize(std::span<const double>(v)), Embedding::basis(0));
}

TEST(L2Normalize, MatchesCompensatedNormOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = random_vector(rng);
    const double norm = compensated_norm(v);
    auto e = l2_normalize(std::span<const double>(v));
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) EXPECT_NEAR(e[i], v[i] / norm, 1e-12);
    std::vector<double> out(e.values().begin(), e.values().end());
    EXPECT_NEAR(compensated_norm(out), 1.0, 1e-6);
  }
}

TEST(L2Normalize, RejectsZeroWrongLengthAndNonFinite) {
  std::vector<double> zero(kEmbeddingDim, 0.0);
  try {
    l2_normalize(std::span<const double>(zero));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateVector);
  }
  std::vector<double> short_v(12, 1.0);
  EXPECT_THROW(l2_normalize(std::span<const double>(short_v)), Error);
  auto nan_v = padded({1.0, std::nan("")});
  EXPECT_THROW(l2_normalize(std::span<const double>(nan_v)), Error);
}

TEST(SquaredDistance, IdentityAndOrthogonal) {
  std::mt19937_64 rng(1);
  auto a = random_embedding(rng);
  EXPECT_EQ(squared_l2_distance(a, a), 0.0);
  EXPECT_DOUBLE_EQ(squared_l2_distance(Embedding::basis(0), Embedding::basis(1)), 2.0);
}

TEST(SquaredDistance, MatchesScalarLoopAndMetricProperties) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = random_embedding(rng);
    auto b = random_embedding(rng);
    const double d = squared_l2_distance(a, b);
    EXPECT_NEAR(d, loop_distance(a, b), 1e-9);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 4.0);
    EXPECT_EQ(d, squared_l2_distance(b, a));
    EXPECT_NEAR(d, 2.0 - 2.0 * dot(a, b), 1e-9);
  }
}

TEST(PairwiseDistances, SingleAndBasis) {
  std::vector<Embedding> one{Embedding::basis(3)};
  auto m1 = pairwise_squared_distances(one);
  ASSERT_EQ(m1.n, 1u);
  EXPECT_EQ(m1(0, 0), 0.0);

  std::vector<Embedding> two{Embedding::basis(0), Embedding::basis(1)};
  auto m2 = pairwise_squared_distances(two);
  EXPECT_EQ(m2(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(m2(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(m2(1, 0), 2.0);
  EXPECT_EQ(m2(1, 1), 0.0);
}

TEST(PairwiseDistances, EqualsEntrywiseCalls) {
  std::mt19937_64 rng(8);
  std::vector<Embedding> es;
  for (int i = 0; i < 8; ++i) es.push_back(random_embedding(rng));
  auto m = pairwise_squared_distances(es);
  for (std::size_t i = 0; i < es.size(); ++i)
    for (std::size_t j = 0; j < es.size(); ++j) EXPECT_EQ(m(i, j), squared_l2_distance(es[i], es[j]));
}

TEST(PairwiseDistances, EmptyBatchThrows) {
  std::vector<Embedding> none;
  try {
    pairwise_squared_distances(none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyBatch);
  }
}

TEST(Serialization, JsonAndBinaryForms) {
  std::mt19937_64 rng(5);
  auto e = random_embedding(rng);
  auto j = to_json_array(e);
  ASSERT_EQ(j.size(), kEmbeddingDim);
  auto back = embedding_from_json(nlohmann::json::parse(j.dump()));
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) EXPECT_NEAR(back[i], e[i], 1e-12);

  auto bytes = to_bytes_f32(e);
  ASSERT_EQ(bytes.size(), 512u);
  auto f32 = from_bytes_f32(bytes);
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) EXPECT_NEAR(f32[i], e[i], 1e-6);

  EXPECT_EQ(from_bytes_f64(to_bytes_f64(e)), e);
  // little-endian binary32 of 1.0 is 00 00 80 3f
  auto basis = to_bytes_f32(Embedding::basis(0));
  EXPECT_EQ(basis[0], 0x00);
  EXPECT_EQ(basis[2], 0x80);
  EXPECT_EQ(basis[3], 0x3f);
}

TEST(FaceChip, EnforcesSquareAndSideBounds) {
  EXPECT_NO_THROW(FaceChip(uniform_image(220, 0)));
  EXPECT_NO_THROW(FaceChip(uniform_image(80, 0)));
  EXPECT_THROW(FaceChip(uniform_image(79, 0)), Error);
  EXPECT_THROW(FaceChip(uniform_image(1025, 0)), Error);
  EXPECT_THROW(FaceChip(RgbImage(220, 200)), Error);
}

TEST(Lcg64, FirstStatesFromSeed42) {
  Lcg64 rng(42);
  const std::uint64_t first = 42ULL * 6364136223846793005ULL + 1442695040888963407ULL;
  EXPECT_EQ(rng.next(), first);
  EXPECT_EQ(rng.next(), first * 6364136223846793005ULL + 1442695040888963407ULL);
}

TEST(ReferenceEmbedder, DeterministicAcrossCallsAndInstances) {
  ReferenceEmbedder a, b;
  FaceChip chip(synthetic_chip());
  EXPECT_EQ(a.embed(chip), a.embed(chip));
  EXPECT_EQ(a.embed(chip), b.embed(chip));
  EXPECT_EQ(embed(chip, a), a.embed(chip));
  EXPECT_TRUE(a.deterministic());
  EXPECT_EQ(a.name(), "reference");
}

TEST(ReferenceEmbedder, UniformBlackMatchesGoldenVector) {
  ReferenceEmbedder emb;
  auto e = emb.embed(FaceChip(uniform_image(220, 0)));
  std::ifstream in(std::string(PRESENZIA_TEST_DATA) + "/reference_black_embedding.json");
  ASSERT_TRUE(in) << "golden file missing";
  auto golden = nlohmann::json::parse(in);
  ASSERT_EQ(golden.size(), kEmbeddingDim);
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) EXPECT_NEAR(e[i], golden[i].get<double>(), 1e-12) << i;
  // A zero feature vector leaves only the +-1 bias row: every component is +-1/sqrt(128).
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) EXPECT_NEAR(std::abs(e[i]), 1.0 / std::sqrt(128.0), 1e-12);
}

TEST(ReferenceEmbedder, OnePixelChangeMovesEmbedding) {
  ReferenceEmbedder emb;
  auto img = synthetic_chip();
  auto before = emb.embed(FaceChip(img));
  img.set(100, 100, 255, 0, 0);
  auto after = emb.embed(FaceChip(img));
  EXPECT_NE(before, after);
  EXPECT_GT(squared_l2_distance(before, after), 0.0);
}

TEST(ReferenceEmbedder, OrderOfUseDoesNotMatter) {
  ReferenceEmbedder emb;
  std::vector<RgbImage> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(uniform_image(120, static_cast<std::uint8_t>(30 * i + 10)));
  imgs.push_back(synthetic_chip());
  std::vector<Embedding> forward, backward;
  for (const auto& im : imgs) forward.push_back(emb.embed(FaceChip(im)));
  for (auto it = imgs.rbegin(); it != imgs.rend(); ++it) backward.push_back(emb.embed(FaceChip(*it)));
  std::reverse(backward.begin(), backward.end());
  EXPECT_EQ(forward, backward);
}

TEST(ReferenceEmbedder, ProjectionIsBalancedSigns) {
  ReferenceEmbedder emb;
  long sum = 0;
  for (auto w : emb.projection()) {
    ASSERT_TRUE(w == 1 || w == -1);
    sum += w;
  }
  // 32768 fair signs: |sum| is within a few standard deviations (sd = 181).
  EXPECT_LT(std::abs(sum), 1000);
}
