#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "presenzia/codec.hpp"
#include "presenzia/config.hpp"
#include "presenzia/dnn_backends.hpp"
#include "service_support.hpp"
#include "test_support.hpp"

using namespace presenzia;
using namespace presenzia::testing;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  ServiceConfig c;
  c.listen_address = "0.0.0.0:9000";
  c.recognition = {5, 0.8};
  c.tracking.n_miss = 4;
  c.tracking.grace = std::chrono::seconds(30);
  c.default_session_length = std::chrono::minutes(90);
  c.bootstrap_tokens = {{"admin-token-xyz", "root", Role::admin}};
  const auto back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.recognition.k, 5u);
  EXPECT_EQ(back.tracking.grace, std::chrono::seconds(30));
  EXPECT_EQ(back.bootstrap_tokens.size(), 1u);
}

TEST(Config, ValidationRejectsBadValues) {
  EXPECT_EQ(code_of([] { config_from_json({{"recognition", {{"k", "three"}}}}); }), ErrorCode::ValidationError);
  auto c = config_from_json({{"recognition", {{"k", 0}}}});
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ValidationError);
  c = config_from_json({{"backends", {{"embedder", "real"}}}});
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ValidationError);
  EXPECT_EQ(code_of([] { ServiceConfig::parse_listen_address("nohost"); }), ErrorCode::ValidationError);
  EXPECT_EQ(ServiceConfig::parse_listen_address("127.0.0.1:8080").second, 8080);
}

TEST(Config, FileThenEnvironmentOverrides) {
  const auto path = temp_path("config.json");
  std::ofstream(path) << R"({"store_path": "from-file.db", "recognition": {"threshold": 0.7}})";
  ::unsetenv("PRESENZIA_STORE");
  ::unsetenv("PRESENZIA_ADDR");
  auto c = load_config(path);
  EXPECT_EQ(c.store_path, "from-file.db");
  EXPECT_DOUBLE_EQ(c.recognition.threshold, 0.7);
  ::setenv("PRESENZIA_STORE", "from-env.db", 1);
  ::setenv("PRESENZIA_ADDR", "127.0.0.1:9999", 1);
  c = load_config(path);
  EXPECT_EQ(c.store_path, "from-env.db");
  EXPECT_EQ(c.listen_address, "127.0.0.1:9999");
  ::unsetenv("PRESENZIA_STORE");
  ::unsetenv("PRESENZIA_ADDR");
  EXPECT_EQ(code_of([] { load_config(std::string("/nonexistent/presenzia.json")); }), ErrorCode::IoError);
  std::filesystem::remove(path);
}

TEST(Backends, MissingModelFilesAreUnavailable) {
  BackendConfig b;
  b.embedder = BackendKind::real;
  b.embedder_model.model_path = "/nonexistent/nn4.small2.v1.t7";
  EXPECT_EQ(code_of([&] { make_embedder(b); }), ErrorCode::BackendUnavailable);
  b.detector = BackendKind::real;
  b.cascade_model_dir = "/nonexistent/cascade";
  EXPECT_EQ(code_of([&] { make_detector(b); }), ErrorCode::BackendUnavailable);
  EXPECT_EQ(make_embedder(BackendConfig{})->name(), "reference");
}

TEST(Codec, PngRoundTripIsLossless) {
  const auto img = synthetic_face(3, 1);
  const auto back = decode_image(encode_png(img));
  EXPECT_EQ(back.width, img.width);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Codec, RejectsUnknownTruncatedAndOversizedInput) {
  EXPECT_EQ(code_of([] { decode_image(std::vector<std::uint8_t>{}); }), ErrorCode::InvalidImage);
  EXPECT_EQ(code_of([] { decode_image(std::vector<std::uint8_t>{'G', 'I', 'F', '8', '9', 'a'}); }), ErrorCode::InvalidImage);
  auto png = face_png(1);
  png.resize(40);
  EXPECT_EQ(code_of([&] { decode_image(png); }), ErrorCode::InvalidImage);
  std::vector<std::uint8_t> huge(kMaxImageBytes + 1, 0);
  huge[0] = 0x89;
  EXPECT_EQ(code_of([&] { decode_image(huge); }), ErrorCode::InvalidImage);
}

TEST(Codec, Base64MatchesKnownVectors) {
  const auto enc = [](std::string s) { return base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())); };
  EXPECT_EQ(enc(""), "");
  EXPECT_EQ(enc("f"), "Zg==");
  EXPECT_EQ(enc("fo"), "Zm8=");
  EXPECT_EQ(enc("foo"), "Zm9v");
  EXPECT_EQ(enc("foobar"), "Zm9vYmFy");
  for (const std::string s : {"f", "fo", "foo", "foob", "fooba", "foobar"}) {
    const auto back = base64_decode(enc(s));
    EXPECT_EQ(std::string(back.begin(), back.end()), s);
  }
  EXPECT_EQ(code_of([] { base64_decode("Zm9"); }), ErrorCode::ValidationError);
  EXPECT_EQ(code_of([] { base64_decode("Zm9v!!=="); }), ErrorCode::ValidationError);
}

TEST(Codec, TokensAreHexAndDistinct) {
  std::set<std::string> seen;
  for (int i = 0; i < 100; ++i) {
    const auto t = random_token();
    EXPECT_EQ(t.size(), 32u);
    EXPECT_EQ(t.find_first_not_of("0123456789abcdef"), std::string::npos);
    EXPECT_TRUE(seen.insert(t).second);
  }
}
