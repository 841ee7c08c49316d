#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "presenzia/codec.hpp"
#include "presenzia/config.hpp"
#include "presenzia/directory.hpp"
#include "presenzia/gallery.hpp"
#include "presenzia/presence.hpp"
#include "presenzia/store.hpp"

namespace presenzia {

struct Principal {
  std::string id;
  Role role = Role::employee;
};

inline const Principal kLocalAdmin{"local-admin", Role::admin};

struct FrameResult {
  PresenceCheck check;
  WorkSession session;
  std::vector<FrameMatch> faces;
  std::optional<AlertEvent> alert;
  std::optional<DeliveryReceipt> delivery;
};

struct SystemDeps {
  ClockFn clock;
  std::shared_ptr<Notifier> notifier;  // defaults to a LogNotifier on config.alert_log_path
  std::shared_ptr<const FaceDetector> detector;
  std::shared_ptr<const EmbedderBackend> embedder;
  std::function<std::uint64_t()> seed_source;
  Duration retry_delay = Duration::zero();
  GalleryHooks gallery_hooks;
};

/// Directory + gallery + tracker + tokens backed by the store. Every mutation
/// is written to the store in one transaction and only then applied in memory,
/// so a failed call leaves both unchanged.
class AttendanceSystem {
 public:
  explicit AttendanceSystem(ServiceConfig config, SystemDeps deps = {})
      : config_(std::move(config)), tracker_(config_.tracking), gallery_(deps.gallery_hooks) {
    config_.validate();
    clock_ = deps.clock ? std::move(deps.clock) : ClockFn(system_now);
    detector_ = deps.detector ? std::move(deps.detector) : make_detector(config_.backends);
    embedder_ = deps.embedder ? std::move(deps.embedder) : make_embedder(config_.backends);
    notifier_ = deps.notifier ? std::move(deps.notifier) : std::make_shared<LogNotifier>(config_.alert_log_path);
    seed_source_ = deps.seed_source ? std::move(deps.seed_source) : std::function<std::uint64_t()>([] {
      std::random_device rd;
      return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    });
    dispatcher_ = std::make_unique<AlertDispatcher>(*notifier_, 3, deps.retry_delay);
    store_ = std::make_unique<Store>(config_.store_path);
    load();
    for (const auto& t : config_.bootstrap_tokens)
      if (!tokens_.contains(t.token)) add_token(t);
  }

  const ServiceConfig& config() const noexcept { return config_; }
  const FaceDetector& detector() const noexcept { return *detector_; }
  const EmbedderBackend& embedder() const noexcept { return *embedder_; }
  const Gallery& gallery() const noexcept { return gallery_; }
  Timestamp now() const { return clock_(); }

  RecognitionConfig recognition() const {
    std::lock_guard lock(mu_);
    return config_.recognition;
  }
  void set_recognition(const RecognitionConfig& r) {
    r.validate();
    std::lock_guard lock(mu_);
    config_.recognition = r;
  }

  // --- tokens ---

  Principal authenticate(const std::string& token) const {
    std::lock_guard lock(mu_);
    auto it = tokens_.find(token);
    if (token.empty() || it == tokens_.end()) fail(ErrorCode::Unauthenticated, "missing or unknown bearer token");
    return {it->second.principal_id, it->second.role};
  }

  void add_token(const ApiToken& t) {
    if (t.token.size() < 8) fail(ErrorCode::ValidationError, "tokens must be at least 8 characters");
    if (t.principal_id.empty()) fail(ErrorCode::ValidationError, "token principal must not be empty");
    std::lock_guard lock(mu_);
    if (tokens_.contains(t.token)) fail(ErrorCode::AlreadyExists, "token already registered");
    auto tx = store_->transaction();
    store_->insert_token(t);
    tx.commit();
    tokens_[t.token] = t;
  }

  ApiToken issue_token(const Principal& caller, Role role, const std::string& principal_id) {
    require_admin(caller);
    {
      std::lock_guard lock(mu_);
      if (role == Role::employee && !directory_.find(principal_id))
        fail(ErrorCode::NotFound, "employee " + principal_id);
    }
    ApiToken t{random_token(), principal_id, role};
    add_token(t);
    return t;
  }

  // --- directory ---

  EmployeeRecord add_employee(const Principal& caller, EmployeeRecord record, const std::vector<std::vector<std::uint8_t>>& images) {
    require_admin(caller);
    validate(record);
    {
      std::lock_guard lock(mu_);
      if (directory_.find(record.employee_id)) fail(ErrorCode::AlreadyExists, "employee " + record.employee_id);
    }
    const auto embeddings = embed_images(images);
    std::lock_guard lock(mu_);
    if (directory_.find(record.employee_id)) fail(ErrorCode::AlreadyExists, "employee " + record.employee_id);
    const auto at = clock_();
    record.enrollment_image_refs.clear();
    auto tx = store_->transaction();
    store_->insert_employee(record);
    for (const auto& bytes : images) {
      record.enrollment_image_refs.push_back(new_image_id());
      store_->insert_image(record.enrollment_image_refs.back(), record.employee_id, ImageKind::enrollment, bytes, at);
    }
    store_->replace_embeddings(record.employee_id, embeddings, at);
    tx.commit();
    directory_.put(record);
    gallery_.enroll(record.employee_id, embeddings, at);
    return record;
  }

  EmployeeRecord update_employee(const Principal& caller, const std::string& id, const EmployeePatch& patch,
                                 const std::optional<std::vector<std::vector<std::uint8_t>>>& images = std::nullopt) {
    require_admin(caller);
    {
      std::lock_guard lock(mu_);
      apply_patch(directory_.get(id), patch);
    }
    std::optional<std::vector<Embedding>> embeddings;
    if (images) embeddings = embed_images(*images);
    std::lock_guard lock(mu_);
    auto updated = apply_patch(directory_.get(id), patch);
    const auto at = clock_();
    auto tx = store_->transaction();
    store_->update_employee(updated);
    if (embeddings) {
      store_->delete_enrollment_images(id);
      updated.enrollment_image_refs.clear();
      for (const auto& bytes : *images) {
        updated.enrollment_image_refs.push_back(new_image_id());
        store_->insert_image(updated.enrollment_image_refs.back(), id, ImageKind::enrollment, bytes, at);
      }
      store_->replace_embeddings(id, *embeddings, at);
    }
    tx.commit();
    directory_.put(updated);
    if (embeddings) gallery_.replace(id, *embeddings, at);
    return updated;
  }

  // Archive records survive; gallery embeddings, enrollment images and tokens
  // of the employee are purged; an active session ends as ended_by_admin.
  void delete_employee(const Principal& caller, const std::string& id) {
    require_admin(caller);
    std::lock_guard lock(mu_);
    directory_.get(id);
    const auto now = clock_();
    std::optional<WorkSession> ended;
    if (const auto* s = tracker_.active_session_for(id)) ended = tracker_.plan_end(s->session_id, now, SessionStatus::ended_by_admin);
    auto tx = store_->transaction();
    if (ended) store_->update_session(*ended);
    store_->delete_enrollment_images(id);
    store_->delete_employee_tokens(id);
    store_->delete_employee(id);
    tx.commit();
    if (ended) tracker_.commit_end(*ended);
    if (gallery_.contains(id)) gallery_.unenroll(id);
    directory_.erase(id);
    std::erase_if(tokens_, [&](const auto& kv) { return kv.second.principal_id == id && kv.second.role != Role::auditor; });
  }

  EmployeeRecord get_employee(const Principal& caller, const std::string& id) const {
    if (caller.role != Role::admin && caller.id != id) fail(ErrorCode::PermissionDenied, "employees may only read their own record");
    std::lock_guard lock(mu_);
    return directory_.get(id);
  }

  std::vector<EmployeeRecord> list_employees(const Principal& caller) const {
    require_admin(caller);
    std::lock_guard lock(mu_);
    return directory_.list();
  }

  // --- sessions ---

  std::pair<WorkSession, CheckSchedule> start_session(const Principal& caller, std::optional<Duration> length = std::nullopt) {
    if (caller.role == Role::auditor) fail(ErrorCode::PermissionDenied, "auditors cannot start sessions");
    const auto duration = length.value_or(config_.default_session_length);
    if (duration <= Duration::zero()) fail(ErrorCode::ValidationError, "session length must be positive");
    std::lock_guard lock(mu_);
    const auto* rec = directory_.find(caller.id);
    if (!rec) fail(ErrorCode::PermissionDenied, "principal " + caller.id + " has no employee record");
    if (!rec->active) fail(ErrorCode::PermissionDenied, "employee " + caller.id + " is inactive");
    auto [session, schedule] = tracker_.plan_start(caller.id, clock_(), duration, seed_source_());
    auto tx = store_->transaction();
    store_->insert_session(session, schedule, tracker_.session_counter() + 1);
    tx.commit();
    tracker_.commit_start(session, schedule);
    return {session, schedule};
  }

  WorkSession get_session(const Principal& caller, const std::string& session_id) const {
    std::lock_guard lock(mu_);
    const auto& s = tracker_.get(session_id);
    require_owner_or_admin(caller, s);
    return s;
  }

  CheckSchedule get_schedule(const Principal& caller, const std::string& session_id) const {
    std::lock_guard lock(mu_);
    require_owner_or_admin(caller, tracker_.get(session_id));
    return tracker_.schedule(session_id);
  }

  std::vector<WorkSession> list_sessions(const Principal& caller) const {
    if (caller.role == Role::auditor) fail(ErrorCode::PermissionDenied, "auditors cannot list sessions");
    std::lock_guard lock(mu_);
    auto all = tracker_.sessions();
    if (caller.role == Role::admin) return all;
    std::erase_if(all, [&](const WorkSession& s) { return s.employee_id != caller.id; });
    return all;
  }

  WorkSession end_session(const Principal& caller, const std::string& session_id) {
    std::lock_guard lock(mu_);
    const auto& current = tracker_.get(session_id);
    require_owner_or_admin(caller, current);
    if (!current.active()) fail(ErrorCode::SessionNotActive, "session " + session_id + " already ended");
    const auto ended = tracker_.plan_end(session_id, clock_(), SessionStatus::ended);
    auto tx = store_->transaction();
    store_->update_session(ended);
    tx.commit();
    tracker_.commit_end(ended);
    return ended;
  }

  /// Decode, recognize, map to an outcome, record. Only the session owner may submit.
  FrameResult submit_frame(const Principal& caller, const std::string& session_id, std::span<const std::uint8_t> bytes) {
    std::string owner;
    RecognitionConfig rc;
    {
      std::lock_guard lock(mu_);
      const auto& s = tracker_.get(session_id);
      if (caller.id != s.employee_id || caller.role == Role::auditor)
        fail(ErrorCode::PermissionDenied, "only the session owner may submit frames");
      if (!s.active()) fail(ErrorCode::SessionNotActive, "session " + session_id + " is not active");
      owner = s.employee_id;
      rc = config_.recognition;
    }
    const auto image = decode_image(bytes);
    auto faces = recognize_frame(image, *detector_, *embedder_, gallery_, rc);

    FrameResult result;
    result.faces = std::move(faces);
    const auto [outcome, best] = classify(result.faces, owner);

    std::vector<CommittedCheck> committed;
    {
      std::lock_guard lock(mu_);
      const auto now = clock_();
      auto pending = overdue_locked(session_id, now);
      PresenceCheck check{session_id, now, outcome, best, std::nullopt};
      const bool keep_frame = outcome != CheckOutcome::present || config_.tracking.store_present_frames;
      if (keep_frame) check.frame_ref = new_image_id();
      pending.push_back(check);
      committed = record_checks_locked(pending, keep_frame ? std::optional(bytes) : std::nullopt);
    }
    auto& mine = committed.back();
    result.check = mine.check;
    result.session = mine.session;
    for (auto& c : committed) {
      if (!c.alert) continue;
      auto receipt = deliver(*c.alert);
      if (&c == &mine) {
        result.alert = c.alert;
        result.delivery = std::move(receipt);
      }
    }
    return result;
  }

  /// Records no_face checks for scheduled slots whose grace window has closed.
  std::vector<PresenceCheck> sweep_overdue() {
    std::vector<CommittedCheck> committed;
    {
      std::lock_guard lock(mu_);
      const auto now = clock_();
      std::vector<PresenceCheck> pending;
      for (const auto& s : tracker_.sessions())
        if (s.active())
          for (auto& c : tracker_.overdue_checks(s.session_id, now)) pending.push_back(std::move(c));
      committed = record_checks_locked(pending, std::nullopt);
    }
    std::vector<PresenceCheck> out;
    for (auto& c : committed) {
      if (c.alert) deliver(*c.alert);
      out.push_back(c.check);
    }
    return out;
  }

  // --- alerts and archive ---

  std::vector<AlertEvent> list_alerts(const Principal& caller) const {
    if (caller.role == Role::auditor) fail(ErrorCode::PermissionDenied, "alerts go to admins and the affected employee");
    std::lock_guard lock(mu_);
    auto all = tracker_.alerts();
    if (caller.role == Role::employee) std::erase_if(all, [&](const AlertEvent& a) { return a.employee_id != caller.id; });
    return all;
  }

  nlohmann::json alert_deliveries(const std::string& alert_id) {
    std::lock_guard lock(mu_);
    return store_->deliveries(alert_id);
  }

  // Employees must ask for their own records explicitly (self); admins are refused.
  std::vector<ArchiveRecord> query_archive(const Principal& caller, ArchiveFilter filter, bool self = false) const {
    if (caller.role == Role::employee && !self)
      fail(ErrorCode::PermissionDenied, "employees may only read their own archive records (self=1)");
    std::lock_guard lock(mu_);
    return tracker_.archive().query(caller.role, caller.id, std::move(filter));
  }

  std::optional<std::vector<std::uint8_t>> image(const std::string& image_id) {
    std::lock_guard lock(mu_);
    return store_->image(image_id);
  }

  std::size_t stored_check_count() {
    std::lock_guard lock(mu_);
    return store_->check_count();
  }

  std::vector<FrameMatch> identify_image(const RgbImage& image) const {
    return recognize_frame(image, *detector_, *embedder_, gallery_, recognition());
  }

 private:
  struct CommittedCheck {
    PresenceCheck check;
    WorkSession session;
    std::optional<AlertEvent> alert;
  };

  static void require_admin(const Principal& p) {
    if (p.role != Role::admin) fail(ErrorCode::PermissionDenied, "admin role required");
  }
  static void require_owner_or_admin(const Principal& p, const WorkSession& s) {
    if (p.role == Role::admin) return;
    if (p.role == Role::employee && p.id == s.employee_id) return;
    fail(ErrorCode::PermissionDenied, "session belongs to another employee");
  }

  // present iff some face is decided as the owner; wrong_person if some face is
  // another enrolled employee; unknown_face if faces exist but none matched.
  static std::pair<CheckOutcome, std::optional<double>> classify(const std::vector<FrameMatch>& faces, const std::string& owner) {
    if (faces.empty()) return {CheckOutcome::no_face, std::nullopt};
    std::optional<double> owner_best, any_best;
    bool owner_seen = false, other_seen = false;
    for (const auto& f : faces) {
      const auto& id = f.identification;
      std::optional<double> nearest;
      if (!id.candidates.empty()) nearest = id.candidates.front().distance;
      if (nearest && (!any_best || *nearest < *any_best)) any_best = nearest;
      if (id.decision && *id.decision == owner) {
        owner_seen = true;
        if (nearest && (!owner_best || *nearest < *owner_best)) owner_best = nearest;
      } else if (id.decision) {
        other_seen = true;
      }
    }
    if (owner_seen) return {CheckOutcome::present, owner_best};
    return {other_seen ? CheckOutcome::wrong_person : CheckOutcome::unknown_face, any_best};
  }

  std::vector<Embedding> embed_images(const std::vector<std::vector<std::uint8_t>>& images) const {
    if (images.empty()) fail(ErrorCode::EnrollmentFailed, "at least one enrollment image is required");
    std::vector<RgbImage> decoded;
    for (const auto& bytes : images) decoded.push_back(decode_image(bytes));
    return embed_enrollment_images(decoded, *detector_, *embedder_);
  }

  std::string new_image_id() const { return "img-" + random_token(); }

  std::vector<PresenceCheck> overdue_locked(const std::string& session_id, Timestamp now) const {
    return tracker_.overdue_checks(session_id, now);
  }

  // Persists the checks in order in one transaction, then commits them to the
  // tracker. The last check owns frame_bytes when given.
  std::vector<CommittedCheck> record_checks_locked(const std::vector<PresenceCheck>& checks,
                                                   std::optional<std::span<const std::uint8_t>> frame_bytes) {
    if (checks.empty()) return {};
    const auto snapshot_of = [&](const WorkSession& s) {
      const auto* rec = directory_.find(s.employee_id);
      return EmployeeSnapshot{s.employee_id, rec ? rec->name : std::string(), rec ? rec->contact : std::string()};
    };
    // Later checks depend on earlier ones, so several are planned on a copy.
    std::optional<SessionTracker> scratch;
    std::vector<SessionTracker::CheckPlan> plans;
    if (checks.size() == 1) {
      plans.push_back(tracker_.plan_check(checks[0], snapshot_of(tracker_.get(checks[0].session_id))));
    } else {
      scratch = tracker_;
      for (const auto& c : checks) plans.push_back(scratch->record_check(c, snapshot_of(scratch->get(c.session_id))));
    }
    auto tx = store_->transaction();
    for (std::size_t i = 0; i < plans.size(); ++i) {
      const auto& p = plans[i];
      if (i + 1 == plans.size() && frame_bytes && p.record.check.frame_ref)
        store_->insert_image(*p.record.check.frame_ref, p.session.employee_id, ImageKind::frame, *frame_bytes, p.record.check.at);
      store_->insert_check(p.record.check);
      store_->append_archive(p.record);
      store_->update_session(p.session);
      if (p.alert) store_->insert_alert(*p.alert, tracker_.alert_counter() + 1 + alerts_before(plans, i));
    }
    tx.commit();
    if (scratch)
      tracker_ = std::move(*scratch);
    else
      tracker_.commit_check(plans[0]);
    std::vector<CommittedCheck> out;
    for (const auto& p : plans) out.push_back({p.record.check, p.session, p.alert});
    return out;
  }

  static std::uint64_t alerts_before(const std::vector<SessionTracker::CheckPlan>& plans, std::size_t i) {
    std::uint64_t n = 0;
    for (std::size_t j = 0; j < i; ++j) n += plans[j].alert ? 1 : 0;
    return n;
  }

  // Delivery happens after the check is committed; outcomes are persisted.
  DeliveryReceipt deliver(const AlertEvent& alert) {
    auto receipt = dispatcher_->dispatch(alert);
    std::lock_guard lock(mu_);
    auto tx = store_->transaction();
    for (const auto& d : receipt.deliveries)
      if (d.status != DeliveryStatus::already_delivered) store_->record_delivery(alert.alert_id, d);
    tx.commit();
    return receipt;
  }

  void load() {
    auto snap = store_->load();
    for (auto& r : snap.employees) directory_.put(std::move(r));
    for (auto& e : snap.gallery) gallery_.enroll(e.person_id, std::move(e.embeddings), e.enrolled_at);
    tracker_.restore(std::move(snap.sessions), std::move(snap.schedules), std::move(snap.archive), std::move(snap.alerts),
                     snap.session_counter, snap.alert_counter);
    for (const auto& [alert_id, to] : snap.delivered) dispatcher_->mark_delivered(alert_id, to);
    for (auto& t : snap.tokens) tokens_[t.token] = std::move(t);
  }

  ServiceConfig config_;
  ClockFn clock_;
  std::shared_ptr<const FaceDetector> detector_;
  std::shared_ptr<const EmbedderBackend> embedder_;
  std::shared_ptr<Notifier> notifier_;
  std::function<std::uint64_t()> seed_source_;
  std::unique_ptr<AlertDispatcher> dispatcher_;
  std::unique_ptr<Store> store_;

  mutable std::mutex mu_;
  Directory directory_;
  SessionTracker tracker_;
  Gallery gallery_;
  std::map<std::string, ApiToken> tokens_;
};

}  // namespace presenzia
