#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "presenzia/directory.hpp"
#include "presenzia/error.hpp"
#include "presenzia/time.hpp"

namespace presenzia {

enum class SessionStatus { active, ended, ended_by_admin };
enum class CheckOutcome { present, no_face, unknown_face, wrong_person };

constexpr std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::active: return "active";
    case SessionStatus::ended: return "ended";
    case SessionStatus::ended_by_admin: return "ended_by_admin";
  }
  return "?";
}

constexpr std::string_view to_string(CheckOutcome o) {
  switch (o) {
    case CheckOutcome::present: return "present";
    case CheckOutcome::no_face: return "no_face";
    case CheckOutcome::unknown_face: return "unknown_face";
    case CheckOutcome::wrong_person: return "wrong_person";
  }
  return "?";
}

inline SessionStatus session_status_from_string(std::string_view s) {
  if (s == "active") return SessionStatus::active;
  if (s == "ended") return SessionStatus::ended;
  if (s == "ended_by_admin") return SessionStatus::ended_by_admin;
  fail(ErrorCode::ValidationError, "unknown session status '" + std::string(s) + "'");
}

inline CheckOutcome outcome_from_string(std::string_view s) {
  if (s == "present") return CheckOutcome::present;
  if (s == "no_face") return CheckOutcome::no_face;
  if (s == "unknown_face") return CheckOutcome::unknown_face;
  if (s == "wrong_person") return CheckOutcome::wrong_person;
  fail(ErrorCode::ValidationError, "unknown check outcome '" + std::string(s) + "'");
}

struct TrackingConfig {
  std::size_t n_miss = 3;
  std::size_t segment_count = 6;
  Duration grace = std::chrono::seconds(120);
  bool store_present_frames = false;

  void validate() const {
    if (n_miss < 1) fail(ErrorCode::ValidationError, "n_miss must be at least 1");
    if (segment_count < 1) fail(ErrorCode::ValidationError, "segment_count must be at least 1");
    if (grace < Duration::zero()) fail(ErrorCode::ValidationError, "grace must be non-negative");
  }
};

struct CheckSchedule {
  std::string session_id;
  std::vector<Timestamp> check_times;
  std::size_t segment_count = 0;
  std::uint64_t rng_seed = 0;
  friend bool operator==(const CheckSchedule&, const CheckSchedule&) = default;
};

/// Splits [begin, end) into segment_count equal integer-millisecond segments and
/// draws one uniform time per segment from mt19937_64(seed).
inline CheckSchedule schedule_checks(Timestamp begin, Timestamp end, std::size_t segment_count, std::uint64_t rng_seed) {
  if (segment_count < 1) fail(ErrorCode::ValidationError, "segment_count must be at least 1");
  const std::int64_t span = (end - begin).count();
  if (span <= 0) fail(ErrorCode::InvalidSpan, "schedule span must be positive");
  if (span < static_cast<std::int64_t>(segment_count))
    fail(ErrorCode::InvalidSpan, "span shorter than one millisecond per segment");

  CheckSchedule s;
  s.segment_count = segment_count;
  s.rng_seed = rng_seed;
  std::mt19937_64 rng(rng_seed);
  const auto n = static_cast<std::int64_t>(segment_count);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t seg_begin = i * span / n;
    const std::int64_t seg_len = (i + 1) * span / n - seg_begin;
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
    const auto offset = std::min(seg_len - 1, static_cast<std::int64_t>(u * static_cast<double>(seg_len)));
    s.check_times.push_back(begin + Duration(seg_begin + offset));
  }
  return s;
}

struct WorkSession {
  std::string session_id;
  std::string employee_id;
  Timestamp started_at{};
  std::optional<Timestamp> ended_at;
  SessionStatus status = SessionStatus::active;
  std::size_t miss_run = 0;
  std::size_t checks_done = 0;
  std::size_t next_slot = 0;  // first scheduled check not yet satisfied
  Duration planned_duration{};

  bool active() const noexcept { return status == SessionStatus::active; }
  friend bool operator==(const WorkSession&, const WorkSession&) = default;
};

struct PresenceCheck {
  std::string session_id;
  Timestamp at{};
  CheckOutcome outcome = CheckOutcome::no_face;
  std::optional<double> best_distance;
  std::optional<std::string> frame_ref;
  friend bool operator==(const PresenceCheck&, const PresenceCheck&) = default;
};

struct AlertEvent {
  std::string alert_id;
  std::string session_id;
  std::string employee_id;
  Timestamp triggered_at{};
  std::size_t miss_run_length = 0;
  std::vector<Role> recipients{Role::admin, Role::employee};
  friend bool operator==(const AlertEvent&, const AlertEvent&) = default;
};

struct EmployeeSnapshot {
  std::string employee_id;
  std::string name;
  std::string contact;
  friend bool operator==(const EmployeeSnapshot&, const EmployeeSnapshot&) = default;
};

struct ArchiveRecord {
  std::uint64_t sequence = 0;
  PresenceCheck check;
  EmployeeSnapshot employee;
  friend bool operator==(const ArchiveRecord&, const ArchiveRecord&) = default;
};

/// Miss-run transition. Returns true when this check completes a run of exactly
/// n_miss consecutive non-present outcomes (one alert per run).
inline bool apply_outcome(WorkSession& session, CheckOutcome outcome, std::size_t n_miss) {
  ++session.checks_done;
  if (outcome == CheckOutcome::present) {
    session.miss_run = 0;
    return false;
  }
  ++session.miss_run;
  return session.miss_run == n_miss;
}

inline WorkSession end_session(WorkSession session, Timestamp now, SessionStatus status = SessionStatus::ended) {
  if (!session.active()) fail(ErrorCode::SessionNotActive, session.session_id);
  if (now < session.started_at) fail(ErrorCode::ValidationError, "session cannot end before it started");
  session.status = status;
  session.ended_at = now;
  return session;
}

struct ArchiveFilter {
  std::optional<std::string> employee_id;
  std::optional<std::string> session_id;
  std::optional<Timestamp> from;  // inclusive
  std::optional<Timestamp> to;    // exclusive
  std::optional<CheckOutcome> outcome;

  bool matches(const ArchiveRecord& r) const {
    if (employee_id && r.employee.employee_id != *employee_id) return false;
    if (session_id && r.check.session_id != *session_id) return false;
    if (from && r.check.at < *from) return false;
    if (to && r.check.at >= *to) return false;
    if (outcome && r.check.outcome != *outcome) return false;
    return true;
  }
};

/// Append-only recognition history with gap-free sequence numbers.
class Archive {
 public:
  std::uint64_t next_sequence() const noexcept { return records_.empty() ? 1 : records_.back().sequence + 1; }

  const ArchiveRecord& append(ArchiveRecord r) {
    if (r.sequence != next_sequence()) fail(ErrorCode::ValidationError, "archive sequence must be gap-free");
    records_.push_back(std::move(r));
    return records_.back();
  }

  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<ArchiveRecord>& records() const noexcept { return records_; }

  /// Admins are refused outright; employees only ever see their own records;
  /// auditors may read everything.
  std::vector<ArchiveRecord> query(Role requester_role, const std::string& requester_id, ArchiveFilter filter) const {
    switch (requester_role) {
      case Role::admin: fail(ErrorCode::PermissionDenied, "admins may not read the archive");
      case Role::employee:
        if (filter.employee_id && *filter.employee_id != requester_id)
          fail(ErrorCode::PermissionDenied, "employees may only read their own archive");
        filter.employee_id = requester_id;
        break;
      case Role::auditor: break;
    }
    std::vector<ArchiveRecord> out;
    for (const auto& r : records_)
      if (filter.matches(r)) out.push_back(r);
    return out;
  }

 private:
  std::vector<ArchiveRecord> records_;
};

/// In-memory session registry. plan_* functions compute the next state without
/// mutating, so a caller can persist first and then commit.
class SessionTracker {
 public:
  struct CheckPlan {
    WorkSession session;
    std::optional<AlertEvent> alert;
    ArchiveRecord record;
  };

  explicit SessionTracker(TrackingConfig config = {}) : config_(config) { config_.validate(); }

  const TrackingConfig& config() const noexcept { return config_; }
  void set_config(const TrackingConfig& c) {
    c.validate();
    config_ = c;
  }

  const WorkSession* find(const std::string& session_id) const {
    auto it = sessions_.find(session_id);
    return it == sessions_.end() ? nullptr : &it->second;
  }
  const WorkSession& get(const std::string& session_id) const {
    const auto* s = find(session_id);
    if (!s) fail(ErrorCode::NotFound, "session " + session_id);
    return *s;
  }
  const CheckSchedule& schedule(const std::string& session_id) const {
    auto it = schedules_.find(session_id);
    if (it == schedules_.end()) fail(ErrorCode::NotFound, "session " + session_id);
    return it->second;
  }

  const WorkSession* active_session_for(const std::string& employee_id) const {
    for (const auto& [_, s] : sessions_)
      if (s.employee_id == employee_id && s.active()) return &s;
    return nullptr;
  }

  std::vector<WorkSession> sessions() const {
    std::vector<WorkSession> out;
    for (const auto& [_, s] : sessions_) out.push_back(s);
    return out;
  }

  const Archive& archive() const noexcept { return archive_; }
  const std::vector<AlertEvent>& alerts() const noexcept { return alerts_; }

  std::pair<WorkSession, CheckSchedule> plan_start(const std::string& employee_id, Timestamp now,
                                                   Duration planned_duration, std::uint64_t seed) const {
    if (active_session_for(employee_id)) fail(ErrorCode::SessionExists, "employee " + employee_id + " has an active session");
    WorkSession s;
    s.session_id = "s-" + std::to_string(session_counter_ + 1);
    s.employee_id = employee_id;
    s.started_at = now;
    s.planned_duration = planned_duration;
    auto sched = schedule_checks(now, now + planned_duration, config_.segment_count, seed);
    sched.session_id = s.session_id;
    return {s, sched};
  }

  void commit_start(const WorkSession& s, const CheckSchedule& sched) {
    sessions_[s.session_id] = s;
    schedules_[s.session_id] = sched;
    ++session_counter_;
  }

  std::pair<WorkSession, CheckSchedule> start_session(const std::string& employee_id, Timestamp now,
                                                      Duration planned_duration, std::uint64_t seed) {
    auto planned = plan_start(employee_id, now, planned_duration, seed);
    commit_start(planned.first, planned.second);
    return planned;
  }

  CheckPlan plan_check(const PresenceCheck& check, const EmployeeSnapshot& snapshot) const {
    const auto& current = get(check.session_id);
    if (!current.active()) fail(ErrorCode::SessionNotActive, check.session_id);
    CheckPlan plan{current, std::nullopt, ArchiveRecord{archive_.next_sequence(), check, snapshot}};
    const auto& times = schedules_.at(check.session_id).check_times;
    if (plan.session.next_slot < times.size() && times[plan.session.next_slot] <= check.at + config_.grace)
      ++plan.session.next_slot;
    if (apply_outcome(plan.session, check.outcome, config_.n_miss)) {
      plan.alert = AlertEvent{"alert-" + std::to_string(alert_counter_ + 1), current.session_id, current.employee_id,
                              check.at, plan.session.miss_run, {Role::admin, Role::employee}};
    }
    return plan;
  }

  void commit_check(const CheckPlan& plan) {
    sessions_[plan.session.session_id] = plan.session;
    archive_.append(plan.record);
    if (plan.alert) {
      alerts_.push_back(*plan.alert);
      ++alert_counter_;
    }
  }

  CheckPlan record_check(const PresenceCheck& check, const EmployeeSnapshot& snapshot) {
    auto plan = plan_check(check, snapshot);
    commit_check(plan);
    return plan;
  }

  WorkSession plan_end(const std::string& session_id, Timestamp now, SessionStatus status = SessionStatus::ended) const {
    return presenzia::end_session(get(session_id), now, status);
  }
  void commit_end(const WorkSession& s) { sessions_[s.session_id] = s; }

  WorkSession end_session(const std::string& session_id, Timestamp now, SessionStatus status = SessionStatus::ended) {
    auto s = plan_end(session_id, now, status);
    commit_end(s);
    return s;
  }

  /// no_face checks owed for scheduled slots whose grace window closed before now.
  std::vector<PresenceCheck> overdue_checks(const std::string& session_id, Timestamp now) const {
    std::vector<PresenceCheck> out;
    const auto& s = get(session_id);
    if (!s.active()) return out;
    const auto& times = schedules_.at(session_id).check_times;
    for (std::size_t i = s.next_slot; i < times.size() && times[i] + config_.grace < now; ++i)
      out.push_back(PresenceCheck{session_id, times[i] + config_.grace, CheckOutcome::no_face, std::nullopt, std::nullopt});
    return out;
  }

  // Restores persisted state; used when reopening a store.
  void restore(std::vector<WorkSession> sessions, std::vector<CheckSchedule> schedules, std::vector<ArchiveRecord> archive,
               std::vector<AlertEvent> alerts, std::uint64_t session_counter, std::uint64_t alert_counter) {
    sessions_.clear();
    schedules_.clear();
    for (auto& s : sessions) sessions_[s.session_id] = std::move(s);
    for (auto& s : schedules) schedules_[s.session_id] = std::move(s);
    archive_ = Archive{};
    for (auto& r : archive) archive_.append(std::move(r));
    alerts_ = std::move(alerts);
    session_counter_ = session_counter;
    alert_counter_ = alert_counter;
  }

  std::uint64_t session_counter() const noexcept { return session_counter_; }
  std::uint64_t alert_counter() const noexcept { return alert_counter_; }

 private:
  TrackingConfig config_;
  std::map<std::string, WorkSession> sessions_;
  std::map<std::string, CheckSchedule> schedules_;
  Archive archive_;
  std::vector<AlertEvent> alerts_;
  std::uint64_t session_counter_ = 0;
  std::uint64_t alert_counter_ = 0;
};

// --- alert delivery -------------------------------------------------------

struct Recipient {
  Role role = Role::admin;
  std::string id;  // "admin" for the admin group, the employee id otherwise
  friend auto operator<=>(const Recipient&, const Recipient&) = default;
};

class Notifier {
 public:
  virtual ~Notifier() = default;
  // Throws on delivery failure.
  virtual void deliver(const AlertEvent& alert, const Recipient& to) = 0;
};

inline nlohmann::json to_json(const AlertEvent& a) {
  auto recipients = nlohmann::json::array();
  for (auto r : a.recipients) recipients.push_back(std::string(to_string(r)));
  return {{"alert_id", a.alert_id},
          {"session_id", a.session_id},
          {"employee_id", a.employee_id},
          {"triggered_at", to_millis(a.triggered_at)},
          {"miss_run_length", a.miss_run_length},
          {"recipients", recipients}};
}

/// Appends one JSON object per delivery to a text sink.
class LogNotifier final : public Notifier {
 public:
  explicit LogNotifier(std::string path) : path_(std::move(path)) {}
  explicit LogNotifier(std::ostream& out) : stream_(&out) {}

  void deliver(const AlertEvent& alert, const Recipient& to) override {
    auto line = to_json(alert);
    line["recipient_role"] = std::string(to_string(to.role));
    line["recipient_id"] = to.id;
    std::lock_guard lock(mutex_);
    if (stream_) {
      *stream_ << line.dump() << '\n';
      stream_->flush();
      return;
    }
    std::ofstream out(path_, std::ios::app);
    if (!out) fail(ErrorCode::IoError, "cannot open alert log " + path_);
    out << line.dump() << '\n';
    out.flush();
    if (!out) fail(ErrorCode::IoError, "cannot write alert log " + path_);
  }

 private:
  std::string path_;
  std::ostream* stream_ = nullptr;
  std::mutex mutex_;
};

enum class DeliveryStatus { delivered, already_delivered, dead_lettered };

constexpr std::string_view to_string(DeliveryStatus s) {
  switch (s) {
    case DeliveryStatus::delivered: return "delivered";
    case DeliveryStatus::already_delivered: return "already_delivered";
    case DeliveryStatus::dead_lettered: return "dead_lettered";
  }
  return "?";
}

struct RecipientDelivery {
  Recipient recipient;
  DeliveryStatus status = DeliveryStatus::delivered;
  int attempts = 0;
  std::string last_error;
};

struct DeliveryReceipt {
  std::string alert_id;
  std::vector<RecipientDelivery> deliveries;

  bool all_delivered() const {
    return std::all_of(deliveries.begin(), deliveries.end(),
                       [](const RecipientDelivery& d) { return d.status != DeliveryStatus::dead_lettered; });
  }
};

inline std::vector<Recipient> recipients_of(const AlertEvent& alert) {
  std::vector<Recipient> out;
  for (auto role : alert.recipients) out.push_back({role, role == Role::admin ? std::string("admin") : alert.employee_id});
  return out;
}

/// At-least-once delivery keyed by (alert_id, recipient). A failing recipient is
/// retried max_retries times before it is dead-lettered.
class AlertDispatcher {
 public:
  explicit AlertDispatcher(Notifier& notifier, int max_retries = 3, Duration retry_delay = Duration::zero())
      : notifier_(notifier), max_retries_(max_retries), retry_delay_(retry_delay) {}

  DeliveryReceipt dispatch(const AlertEvent& alert) {
    DeliveryReceipt receipt{alert.alert_id, {}};
    for (const auto& to : recipients_of(alert)) {
      RecipientDelivery d{to, DeliveryStatus::dead_lettered, 0, {}};
      if (is_delivered(alert.alert_id, to)) {
        d.status = DeliveryStatus::already_delivered;
        receipt.deliveries.push_back(d);
        continue;
      }
      for (int attempt = 0; attempt <= max_retries_; ++attempt) {
        if (attempt > 0 && retry_delay_ > Duration::zero()) std::this_thread::sleep_for(retry_delay_);
        ++d.attempts;
        try {
          notifier_.deliver(alert, to);
          d.status = DeliveryStatus::delivered;
          break;
        } catch (const std::exception& e) {
          d.last_error = e.what();
        }
      }
      std::lock_guard lock(mutex_);
      if (d.status == DeliveryStatus::delivered) {
        delivered_.insert({alert.alert_id, to});
      } else {
        dead_letters_.push_back({alert.alert_id, to});
      }
      receipt.deliveries.push_back(d);
    }
    return receipt;
  }

  bool is_delivered(const std::string& alert_id, const Recipient& to) const {
    std::lock_guard lock(mutex_);
    return delivered_.contains({alert_id, to});
  }

  void mark_delivered(const std::string& alert_id, const Recipient& to) {
    std::lock_guard lock(mutex_);
    delivered_.insert({alert_id, to});
  }

  std::vector<std::pair<std::string, Recipient>> dead_letters() const {
    std::lock_guard lock(mutex_);
    return dead_letters_;
  }

 private:
  Notifier& notifier_;
  int max_retries_;
  Duration retry_delay_;
  mutable std::mutex mutex_;
  std::set<std::pair<std::string, Recipient>> delivered_;
  std::vector<std::pair<std::string, Recipient>> dead_letters_;
};

inline DeliveryReceipt dispatch_alert(const AlertEvent& alert, AlertDispatcher& dispatcher) {
  return dispatcher.dispatch(alert);
}

// --- serialization --------------------------------------------------------

inline nlohmann::json to_json(const WorkSession& s) {
  nlohmann::json j{{"session_id", s.session_id},
                   {"employee_id", s.employee_id},
                   {"started_at", to_millis(s.started_at)},
                   {"ended_at", nullptr},
                   {"status", std::string(to_string(s.status))},
                   {"miss_run", s.miss_run},
                   {"checks_done", s.checks_done},
                   {"planned_duration_ms", s.planned_duration.count()}};
  if (s.ended_at) j["ended_at"] = to_millis(*s.ended_at);
  return j;
}

inline nlohmann::json to_json(const CheckSchedule& s) {
  auto times = nlohmann::json::array();
  for (auto t : s.check_times) times.push_back(to_millis(t));
  return {{"session_id", s.session_id}, {"check_times", times}, {"segment_count", s.segment_count}, {"rng_seed", s.rng_seed}};
}

inline nlohmann::json to_json(const PresenceCheck& c) {
  nlohmann::json j{{"session_id", c.session_id},
                   {"at", to_millis(c.at)},
                   {"outcome", std::string(to_string(c.outcome))},
                   {"best_distance", nullptr},
                   {"frame_ref", nullptr}};
  if (c.best_distance) j["best_distance"] = *c.best_distance;
  if (c.frame_ref) j["frame_ref"] = *c.frame_ref;
  return j;
}

inline nlohmann::json to_json(const ArchiveRecord& r) {
  return {{"sequence", r.sequence},
          {"check", to_json(r.check)},
          {"employee",
           {{"employee_id", r.employee.employee_id}, {"name", r.employee.name}, {"contact", r.employee.contact}}}};
}

inline nlohmann::json to_json(const DeliveryReceipt& r) {
  auto arr = nlohmann::json::array();
  for (const auto& d : r.deliveries)
    arr.push_back({{"recipient_role", std::string(to_string(d.recipient.role))},
                   {"recipient_id", d.recipient.id},
                   {"status", std::string(to_string(d.status))},
                   {"attempts", d.attempts}});
  return {{"alert_id", r.alert_id}, {"deliveries", arr}};
}

}  // namespace presenzia
