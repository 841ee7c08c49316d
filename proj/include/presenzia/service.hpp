#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "presenzia/codec.hpp"
#include "presenzia/openapi.hpp"
#include "presenzia/system.hpp"

namespace presenzia {

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::Unauthenticated: return 401;
    case ErrorCode::PermissionDenied: return 403;
    case ErrorCode::NotFound:
    case ErrorCode::NotEnrolled: return 404;
    case ErrorCode::AlreadyExists:
    case ErrorCode::AlreadyEnrolled:
    case ErrorCode::SessionExists:
    case ErrorCode::SessionNotActive: return 409;
    case ErrorCode::BackendUnavailable: return 503;
    case ErrorCode::StorageError:
    case ErrorCode::IoError:
    case ErrorCode::DeadLettered: return 500;
    default: return 400;
  }
}

inline nlohmann::json to_json(const FrameResult& r) {
  auto faces = nlohmann::json::array();
  std::optional<std::string> decision;
  for (const auto& f : r.faces) {
    faces.push_back({{"detection", to_json(f.detection)}, {"identification", to_json(f.identification)}});
    const auto d = f.identification.decision.value_or(kUnknownLabel);
    if (!decision || d == r.session.employee_id) decision = d;
  }
  nlohmann::json j{{"outcome", std::string(to_string(r.check.outcome))},
                   {"decision", decision ? nlohmann::json(*decision) : nlohmann::json()},
                   {"alert_id", r.alert ? nlohmann::json(r.alert->alert_id) : nlohmann::json()},
                   {"check", to_json(r.check)},
                   {"session", to_json(r.session)},
                   {"faces", faces},
                   {"delivery", r.delivery ? to_json(*r.delivery) : nlohmann::json()}};
  return j;
}

struct HttpOptions {
  std::size_t threads = 32;
  std::string ui_dir;
  std::size_t max_body_bytes = 64u * 1024u * 1024u;
};

/// REST binding of AttendanceSystem. Errors are {code, message} JSON.
class HttpService {
 public:
  HttpService(AttendanceSystem& system, HttpOptions options = {}) : system_(system), options_(std::move(options)) {
    const auto threads = options_.threads;
    server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server_.set_payload_max_length(options_.max_body_bytes);
    if (!options_.ui_dir.empty()) server_.set_mount_point("/ui", options_.ui_dir);
    routes();
  }
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;
  ~HttpService() { stop(); }

  // Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
      if (port_ < 0) fail(ErrorCode::IoError, "cannot bind " + host);
    } else {
      if (!server_.bind_to_port(host, port)) fail(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
      port_ = port;
    }
    return port_;
  }

  // Blocks until stop().
  void listen() { server_.listen_after_bind(); }

  void start() {
    worker_ = std::thread([this] { listen(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (worker_.joinable()) worker_.join();
  }

  int port() const noexcept { return port_; }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void send(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send(res, status, {{"code", code}, {"message", message}});
  }

  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.code()), std::string(to_string(e.code())), e.detail());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, "ValidationError", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "InternalError", e.what());
      }
    };
  }

  Principal caller(const httplib::Request& req) const {
    const auto header = req.get_header_value("Authorization");
    static const std::string prefix = "Bearer ";
    if (header.rfind(prefix, 0) != 0) fail(ErrorCode::Unauthenticated, "missing bearer token");
    return system_.authenticate(header.substr(prefix.size()));
  }

  static nlohmann::json parse_body(const httplib::Request& req, bool allow_empty = false) {
    if (req.body.empty()) {
      if (allow_empty) return nlohmann::json::object();
      fail(ErrorCode::ValidationError, "request body must be JSON");
    }
    try {
      auto j = nlohmann::json::parse(req.body);
      if (!j.is_object()) fail(ErrorCode::ValidationError, "request body must be a JSON object");
      return j;
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::ValidationError, std::string("malformed JSON: ") + e.what());
    }
  }

  static std::vector<std::vector<std::uint8_t>> images_from_json(const nlohmann::json& j) {
    std::vector<std::vector<std::uint8_t>> out;
    if (!j.is_array()) fail(ErrorCode::ValidationError, "images must be an array of base64 strings");
    for (const auto& item : j) {
      if (!item.is_string()) fail(ErrorCode::ValidationError, "images must be an array of base64 strings");
      out.push_back(base64_decode(item.get<std::string>()));
    }
    return out;
  }

  static std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

  nlohmann::json alert_json(const AlertEvent& a, bool with_deliveries) const {
    auto j = to_json(a);
    if (with_deliveries) j["deliveries"] = system_.alert_deliveries(a.alert_id);
    return j;
  }

  void routes() {
    server_.Get("/healthz", guarded([](const httplib::Request&, httplib::Response& res) { send(res, 200, {{"status", "ok"}}); }));
    server_.Get("/openapi.json", guarded([](const httplib::Request&, httplib::Response& res) { send(res, 200, openapi_document()); }));

    server_.Get("/employees", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto out = nlohmann::json::array();
      for (const auto& r : system_.list_employees(caller(req))) out.push_back(to_json(r));
      send(res, 200, out);
    }));

    server_.Post("/employees", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto who = caller(req);
      EmployeeRecord record;
      std::vector<std::vector<std::uint8_t>> images;
      if (req.is_multipart_form_data()) {
        if (!req.has_file("record")) fail(ErrorCode::ValidationError, "multipart upload needs a 'record' part");
        record = employee_from_json(nlohmann::json::parse(req.get_file_value("record").content));
        for (const auto& f : req.get_file_values("images")) images.push_back(bytes_of(f.content));
      } else {
        const auto body = parse_body(req);
        record = employee_from_json(body);
        if (body.contains("images")) images = images_from_json(body.at("images"));
      }
      send(res, 201, to_json(system_.add_employee(who, record, images)));
    }));

    server_.Get("/employees/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, 200, to_json(system_.get_employee(caller(req), req.path_params.at("id"))));
    }));

    server_.Put("/employees/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto who = caller(req);
      const auto body = parse_body(req);
      if (body.contains("employee_id") && body.at("employee_id") != req.path_params.at("id"))
        fail(ErrorCode::ValidationError, "employee_id cannot be changed");
      std::optional<std::vector<std::vector<std::uint8_t>>> images;
      if (body.contains("images")) images = images_from_json(body.at("images"));
      send(res, 200, to_json(system_.update_employee(who, req.path_params.at("id"), patch_from_json(body), images)));
    }));

    server_.Delete("/employees/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      system_.delete_employee(caller(req), req.path_params.at("id"));
      res.status = 204;
    }));

    server_.Get("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto out = nlohmann::json::array();
      for (const auto& s : system_.list_sessions(caller(req))) out.push_back(to_json(s));
      send(res, 200, out);
    }));

    server_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto who = caller(req);
      const auto body = parse_body(req, true);
      std::optional<Duration> length;
      if (body.contains("duration_minutes")) {
        const auto minutes = body.at("duration_minutes").get<std::int64_t>();
        if (minutes <= 0) fail(ErrorCode::ValidationError, "duration_minutes must be positive");
        length = std::chrono::minutes(minutes);
      }
      const auto [session, schedule] = system_.start_session(who, length);
      send(res, 201, {{"session", to_json(session)}, {"schedule", to_json(schedule)}});
    }));

    server_.Get("/sessions/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto who = caller(req);
      const auto& id = req.path_params.at("id");
      const auto session = system_.get_session(who, id);
      send(res, 200, {{"session", to_json(session)}, {"schedule", to_json(system_.get_schedule(who, id))}});
    }));

    server_.Post("/sessions/:id/frames", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto who = caller(req);
      std::vector<std::uint8_t> frame;
      if (req.is_multipart_form_data()) {
        if (req.has_file("frame")) {
          frame = bytes_of(req.get_file_value("frame").content);
        } else if (!req.files.empty()) {
          frame = bytes_of(req.files.begin()->second.content);
        } else {
          fail(ErrorCode::InvalidImage, "multipart upload has no 'frame' part");
        }
      } else {
        frame = bytes_of(req.body);
      }
      send(res, 200, to_json(system_.submit_frame(who, req.path_params.at("id"), frame)));
    }));

    server_.Post("/sessions/:id/end", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send(res, 200, to_json(system_.end_session(caller(req), req.path_params.at("id"))));
    }));

    server_.Get("/alerts", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto who = caller(req);
      auto out = nlohmann::json::array();
      for (const auto& a : system_.list_alerts(who)) out.push_back(alert_json(a, who.role == Role::admin));
      send(res, 200, out);
    }));

    server_.Get("/archive", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto who = caller(req);
      ArchiveFilter filter;
      const auto param = [&](const char* name) -> std::optional<std::string> {
        if (!req.has_param(name)) return std::nullopt;
        return req.get_param_value(name);
      };
      const auto millis = [&](const char* name) -> std::optional<Timestamp> {
        const auto v = param(name);
        if (!v) return std::nullopt;
        try {
          return from_millis(std::stoll(*v));
        } catch (const std::exception&) {
          fail(ErrorCode::ValidationError, std::string(name) + " must be epoch milliseconds");
        }
      };
      filter.employee_id = param("employee_id");
      filter.session_id = param("session_id");
      filter.from = millis("from");
      filter.to = millis("to");
      if (auto o = param("outcome")) filter.outcome = outcome_from_string(*o);
      const auto self = param("self");
      const bool is_self = self && (*self == "1" || *self == "true");
      auto out = nlohmann::json::array();
      for (const auto& r : system_.query_archive(who, filter, is_self)) out.push_back(to_json(r));
      send(res, 200, out);
    }));

    server_.Post("/tokens", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto who = caller(req);
      const auto body = parse_body(req);
      const auto t = system_.issue_token(who, role_from_string(body.at("role").get<std::string>()),
                                         body.at("principal_id").get<std::string>());
      send(res, 201, {{"token", t.token}, {"principal_id", t.principal_id}, {"role", std::string(to_string(t.role))}});
    }));

    server_.Post("/sweep", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (caller(req).role != Role::admin) fail(ErrorCode::PermissionDenied, "admin role required");
      auto out = nlohmann::json::array();
      for (const auto& c : system_.sweep_overdue()) out.push_back(to_json(c));
      send(res, 200, out);
    }));
  }

  AttendanceSystem& system_;
  HttpOptions options_;
  httplib::Server server_;
  std::thread worker_;
  int port_ = -1;
};

/// Periodically records overdue checks while the service runs.
class OverdueSweeper {
 public:
  OverdueSweeper(AttendanceSystem& system, Duration interval) : system_(system), interval_(interval) {
    thread_ = std::thread([this] { run(); });
  }
  OverdueSweeper(const OverdueSweeper&) = delete;
  OverdueSweeper& operator=(const OverdueSweeper&) = delete;
  ~OverdueSweeper() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    thread_.join();
  }

 private:
  void run() {
    std::unique_lock lock(mu_);
    while (!cv_.wait_for(lock, interval_, [this] { return stopping_; })) {
      lock.unlock();
      try {
        system_.sweep_overdue();
      } catch (const std::exception&) {
        // retried on the next tick
      }
      lock.lock();
    }
  }

  AttendanceSystem& system_;
  Duration interval_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  std::thread thread_;
};

}  // namespace presenzia
