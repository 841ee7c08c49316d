#pragma once

#include <cstdlib>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "presenzia/detection.hpp"
#include "presenzia/dnn_backends.hpp"
#include "presenzia/embedding.hpp"
#include "presenzia/error.hpp"
#include "presenzia/gallery.hpp"
#include "presenzia/metric_learning.hpp"
#include "presenzia/presence.hpp"
#include "presenzia/store.hpp"

namespace presenzia {

enum class BackendKind { reference, real };

inline BackendKind backend_from_string(std::string_view s) {
  if (s == "reference") return BackendKind::reference;
  if (s == "real") return BackendKind::real;
  fail(ErrorCode::ValidationError, "backend must be 'reference' or 'real', got '" + std::string(s) + "'");
}

inline const char* to_string(BackendKind b) { return b == BackendKind::reference ? "reference" : "real"; }

struct BackendConfig {
  BackendKind detector = BackendKind::reference;
  BackendKind embedder = BackendKind::reference;
  std::string cascade_model_dir;  // det1..det3 .prototxt/.caffemodel
  bool cascade_transposed = false;
  DnnEmbedderOptions embedder_model;
  CascadeConfig cascade;
};

struct ServiceConfig {
  std::string listen_address = "127.0.0.1:8080";
  std::string store_path = "presenzia.db";
  RecognitionConfig recognition;
  TrackingConfig tracking;
  MiningConfig mining;
  BackendConfig backends;
  Duration default_session_length = std::chrono::hours(8);
  std::string alert_log_path = "alerts.log";
  std::size_t threads = 32;
  std::string ui_dir;  // static assets served under /ui when set
  std::vector<ApiToken> bootstrap_tokens;

  void validate() const {
    recognition.validate();
    tracking.validate();
    mining.validate();
    if (store_path.empty()) fail(ErrorCode::ValidationError, "store path must not be empty");
    if (threads < 1) fail(ErrorCode::ValidationError, "threads must be at least 1");
    if (default_session_length <= Duration::zero()) fail(ErrorCode::ValidationError, "session length must be positive");
    if (backends.detector == BackendKind::real && backends.cascade_model_dir.empty())
      fail(ErrorCode::ValidationError, "real detector needs backends.cascade_model_dir");
    if (backends.embedder == BackendKind::real && backends.embedder_model.model_path.empty())
      fail(ErrorCode::ValidationError, "real embedder needs backends.embedder_model.path");
    parse_listen_address(listen_address);
  }

  static std::pair<std::string, int> parse_listen_address(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos || colon == 0) fail(ErrorCode::ValidationError, "listen address must be host:port");
    int port = -1;
    try {
      std::size_t used = 0;
      port = std::stoi(addr.substr(colon + 1), &used);
      if (used != addr.size() - colon - 1) port = -1;
    } catch (const std::exception&) {
    }
    if (port < 0 || port > 65535) fail(ErrorCode::ValidationError, "bad port in listen address '" + addr + "'");
    return {addr.substr(0, colon), port};
  }
};

namespace detail {

template <class T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ServiceConfig config_from_json(const nlohmann::json& j) {
  ServiceConfig c;
  try {
    detail::read_if(j, "listen_address", c.listen_address);
    detail::read_if(j, "store_path", c.store_path);
    detail::read_if(j, "alert_log_path", c.alert_log_path);
    detail::read_if(j, "threads", c.threads);
    detail::read_if(j, "ui_dir", c.ui_dir);
    if (j.contains("default_session_minutes")) c.default_session_length = std::chrono::minutes(j.at("default_session_minutes").get<int>());
    if (j.contains("recognition")) {
      const auto& r = j.at("recognition");
      detail::read_if(r, "k", c.recognition.k);
      detail::read_if(r, "threshold", c.recognition.threshold);
    }
    if (j.contains("tracking")) {
      const auto& t = j.at("tracking");
      detail::read_if(t, "n_miss", c.tracking.n_miss);
      detail::read_if(t, "segment_count", c.tracking.segment_count);
      detail::read_if(t, "store_present_frames", c.tracking.store_present_frames);
      if (t.contains("grace_seconds")) c.tracking.grace = std::chrono::seconds(t.at("grace_seconds").get<std::int64_t>());
    }
    if (j.contains("mining")) {
      const auto& m = j.at("mining");
      detail::read_if(m, "margin", c.mining.margin);
      detail::read_if(m, "batch_size", c.mining.batch_size);
      detail::read_if(m, "drop_easy", c.mining.drop_easy);
    }
    if (j.contains("backends")) {
      const auto& b = j.at("backends");
      if (b.contains("detector")) c.backends.detector = backend_from_string(b.at("detector").get<std::string>());
      if (b.contains("embedder")) c.backends.embedder = backend_from_string(b.at("embedder").get<std::string>());
      detail::read_if(b, "cascade_model_dir", c.backends.cascade_model_dir);
      detail::read_if(b, "cascade_transposed", c.backends.cascade_transposed);
      if (b.contains("embedder_model")) {
        const auto& e = b.at("embedder_model");
        detail::read_if(e, "path", c.backends.embedder_model.model_path);
        detail::read_if(e, "config", c.backends.embedder_model.config_path);
        detail::read_if(e, "input_side", c.backends.embedder_model.input_side);
        detail::read_if(e, "scale", c.backends.embedder_model.scale);
        detail::read_if(e, "swap_rb", c.backends.embedder_model.swap_rb);
      }
      if (b.contains("cascade")) {
        const auto& d = b.at("cascade");
        detail::read_if(d, "stage_thresholds", c.backends.cascade.stage_thresholds);
        detail::read_if(d, "nms_iou", c.backends.cascade.nms_iou);
        detail::read_if(d, "pyramid_factor", c.backends.cascade.pyramid_factor);
        detail::read_if(d, "min_face", c.backends.cascade.min_face);
      }
    }
    if (j.contains("bootstrap_tokens"))
      for (const auto& t : j.at("bootstrap_tokens"))
        c.bootstrap_tokens.push_back({t.at("token").get<std::string>(), t.at("principal_id").get<std::string>(),
                                      role_from_string(t.at("role").get<std::string>())});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("config: ") + e.what());
  }
  return c;
}

inline nlohmann::json to_json(const ServiceConfig& c) {
  auto tokens = nlohmann::json::array();
  for (const auto& t : c.bootstrap_tokens)
    tokens.push_back({{"token", t.token}, {"principal_id", t.principal_id}, {"role", std::string(to_string(t.role))}});
  const auto& b = c.backends;
  return {{"listen_address", c.listen_address},
          {"store_path", c.store_path},
          {"alert_log_path", c.alert_log_path},
          {"threads", c.threads},
          {"ui_dir", c.ui_dir},
          {"default_session_minutes", std::chrono::duration_cast<std::chrono::minutes>(c.default_session_length).count()},
          {"recognition", {{"k", c.recognition.k}, {"threshold", c.recognition.threshold}}},
          {"tracking",
           {{"n_miss", c.tracking.n_miss},
            {"segment_count", c.tracking.segment_count},
            {"grace_seconds", std::chrono::duration_cast<std::chrono::seconds>(c.tracking.grace).count()},
            {"store_present_frames", c.tracking.store_present_frames}}},
          {"mining", {{"margin", c.mining.margin}, {"batch_size", c.mining.batch_size}, {"drop_easy", c.mining.drop_easy}}},
          {"backends",
           {{"detector", to_string(b.detector)},
            {"embedder", to_string(b.embedder)},
            {"cascade_model_dir", b.cascade_model_dir},
            {"cascade_transposed", b.cascade_transposed},
            {"embedder_model",
             {{"path", b.embedder_model.model_path},
              {"config", b.embedder_model.config_path},
              {"input_side", b.embedder_model.input_side},
              {"scale", b.embedder_model.scale},
              {"swap_rb", b.embedder_model.swap_rb}}},
            {"cascade",
             {{"stage_thresholds", b.cascade.stage_thresholds},
              {"nms_iou", b.cascade.nms_iou},
              {"pyramid_factor", b.cascade.pyramid_factor},
              {"min_face", b.cascade.min_face}}}}},
          {"bootstrap_tokens", tokens}};
}

/// Defaults, then the file (explicit path or PRESENZIA_CONFIG), then the
/// PRESENZIA_ADDR / PRESENZIA_STORE environment overrides.
inline ServiceConfig load_config(const std::optional<std::string>& path = std::nullopt) {
  std::optional<std::string> file = path;
  if (!file)
    if (const char* env = std::getenv("PRESENZIA_CONFIG"); env && *env) file = env;
  ServiceConfig c;
  if (file) {
    std::ifstream in(*file);
    if (!in) fail(ErrorCode::IoError, "cannot open config " + *file);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ValidationError, "config " + *file + ": " + e.what());
    }
    c = config_from_json(j);
  }
  if (const char* env = std::getenv("PRESENZIA_ADDR"); env && *env) c.listen_address = env;
  if (const char* env = std::getenv("PRESENZIA_STORE"); env && *env) c.store_path = env;
  c.validate();
  return c;
}

inline std::shared_ptr<const FaceDetector> make_detector(const BackendConfig& b) {
  if (b.detector == BackendKind::reference) return std::make_shared<FaceDetector>(make_reference_detector(b.cascade));
  auto paths = CascadeModelPaths::in_directory(b.cascade_model_dir);
  paths.transposed = b.cascade_transposed;
  return std::make_shared<FaceDetector>(make_cascade_detector(paths, b.cascade));
}

inline std::shared_ptr<const EmbedderBackend> make_embedder(const BackendConfig& b) {
  if (b.embedder == BackendKind::reference) return std::make_shared<ReferenceEmbedder>();
  return std::make_shared<DnnEmbedder>(b.embedder_model);
}

}  // namespace presenzia
