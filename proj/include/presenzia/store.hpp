#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <sqlite3.h>

#include "presenzia/directory.hpp"
#include "presenzia/embedding.hpp"
#include "presenzia/error.hpp"
#include "presenzia/gallery.hpp"
#include "presenzia/presence.hpp"
#include "presenzia/time.hpp"

// Embedded relational store (single SQLite file). Not thread-safe on its own;
// AttendanceSystem serializes every call.

namespace presenzia {

struct ApiToken {
  std::string token;
  std::string principal_id;
  Role role = Role::employee;
  friend bool operator==(const ApiToken&, const ApiToken&) = default;
};

enum class ImageKind { enrollment, frame };

inline const char* to_string(ImageKind k) { return k == ImageKind::enrollment ? "enrollment" : "frame"; }

namespace sql {

class Statement {
 public:
  Statement(sqlite3* db, const char* text) : db_(db) {
    if (sqlite3_prepare_v2(db, text, -1, &stmt_, nullptr) != SQLITE_OK)
      fail(ErrorCode::StorageError, std::string("prepare: ") + sqlite3_errmsg(db));
  }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;
  ~Statement() { sqlite3_finalize(stmt_); }

  Statement& bind(int i, std::int64_t v) { return check(sqlite3_bind_int64(stmt_, i, v)); }
  Statement& bind(int i, std::uint64_t v) { return bind(i, static_cast<std::int64_t>(v)); }
  Statement& bind(int i, int v) { return bind(i, static_cast<std::int64_t>(v)); }
  Statement& bind(int i, bool v) { return bind(i, static_cast<std::int64_t>(v ? 1 : 0)); }
  Statement& bind(int i, double v) { return check(sqlite3_bind_double(stmt_, i, v)); }
  Statement& bind(int i, const std::string& v) {
    return check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
  }
  Statement& bind(int i, std::string_view v) {
    return check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
  }
  Statement& bind(int i, const char* v) { return bind(i, std::string_view(v)); }
  Statement& bind(int i, std::span<const std::uint8_t> v) {
    return check(sqlite3_bind_blob(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
  }
  Statement& bind(int i, const std::vector<std::uint8_t>& v) { return bind(i, std::span<const std::uint8_t>(v)); }
  Statement& bind_null(int i) { return check(sqlite3_bind_null(stmt_, i)); }
  template <class T>
  Statement& bind(int i, const std::optional<T>& v) {
    return v ? bind(i, *v) : bind_null(i);
  }

  // True while a row is available.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    fail(ErrorCode::StorageError, sqlite3_errmsg(db_));
  }
  void run() {
    while (step()) {
    }
  }

  bool is_null(int c) const { return sqlite3_column_type(stmt_, c) == SQLITE_NULL; }
  std::int64_t integer(int c) const { return sqlite3_column_int64(stmt_, c); }
  double real(int c) const { return sqlite3_column_double(stmt_, c); }
  std::string text(int c) const {
    const auto* p = sqlite3_column_text(stmt_, c);
    return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(stmt_, c))) : std::string();
  }
  std::vector<std::uint8_t> blob(int c) const {
    const auto* p = static_cast<const std::uint8_t*>(sqlite3_column_blob(stmt_, c));
    return p ? std::vector<std::uint8_t>(p, p + sqlite3_column_bytes(stmt_, c)) : std::vector<std::uint8_t>{};
  }
  std::optional<std::string> optional_text(int c) const { return is_null(c) ? std::nullopt : std::optional(text(c)); }
  std::optional<double> optional_real(int c) const { return is_null(c) ? std::nullopt : std::optional(real(c)); }

 private:
  Statement& check(int rc) {
    if (rc != SQLITE_OK) fail(ErrorCode::StorageError, std::string("bind: ") + sqlite3_errmsg(db_));
    return *this;
  }

  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

}  // namespace sql

inline constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS employees (
  employee_id TEXT PRIMARY KEY,
  name TEXT NOT NULL,
  contact TEXT NOT NULL,
  role TEXT NOT NULL CHECK (role IN ('admin', 'employee')),
  active INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS images (
  image_id TEXT PRIMARY KEY,
  owner_id TEXT,
  kind TEXT NOT NULL CHECK (kind IN ('enrollment', 'frame')),
  bytes BLOB NOT NULL,
  created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS gallery_embeddings (
  employee_id TEXT NOT NULL REFERENCES employees(employee_id) ON DELETE CASCADE,
  ordinal INTEGER NOT NULL,
  vector BLOB NOT NULL,
  enrolled_at INTEGER NOT NULL,
  PRIMARY KEY (employee_id, ordinal)
);
CREATE TABLE IF NOT EXISTS sessions (
  session_id TEXT PRIMARY KEY,
  ordinal INTEGER NOT NULL UNIQUE,
  employee_id TEXT REFERENCES employees(employee_id) ON DELETE SET NULL,
  owner_id TEXT NOT NULL,
  started_at INTEGER NOT NULL,
  ended_at INTEGER,
  status TEXT NOT NULL,
  miss_run INTEGER NOT NULL,
  checks_done INTEGER NOT NULL,
  next_slot INTEGER NOT NULL,
  planned_ms INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS schedules (
  session_id TEXT PRIMARY KEY REFERENCES sessions(session_id),
  segment_count INTEGER NOT NULL,
  rng_seed INTEGER NOT NULL,
  check_times TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS checks (
  check_id INTEGER PRIMARY KEY AUTOINCREMENT,
  session_id TEXT NOT NULL REFERENCES sessions(session_id),
  at INTEGER NOT NULL,
  outcome TEXT NOT NULL,
  best_distance REAL,
  frame_ref TEXT
);
CREATE TABLE IF NOT EXISTS archive (
  sequence INTEGER PRIMARY KEY,
  session_id TEXT NOT NULL,
  employee_id TEXT NOT NULL,
  employee_name TEXT NOT NULL,
  employee_contact TEXT NOT NULL,
  at INTEGER NOT NULL,
  outcome TEXT NOT NULL,
  best_distance REAL,
  frame_ref TEXT
);
CREATE TRIGGER IF NOT EXISTS archive_no_update BEFORE UPDATE ON archive
BEGIN SELECT RAISE(ABORT, 'archive is append-only'); END;
CREATE TRIGGER IF NOT EXISTS archive_no_delete BEFORE DELETE ON archive
BEGIN SELECT RAISE(ABORT, 'archive is append-only'); END;
CREATE TABLE IF NOT EXISTS alerts (
  alert_id TEXT PRIMARY KEY,
  ordinal INTEGER NOT NULL UNIQUE,
  session_id TEXT NOT NULL REFERENCES sessions(session_id),
  employee_id TEXT NOT NULL,
  triggered_at INTEGER NOT NULL,
  miss_run_length INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS alert_deliveries (
  alert_id TEXT NOT NULL REFERENCES alerts(alert_id),
  recipient_role TEXT NOT NULL,
  recipient_id TEXT NOT NULL,
  status TEXT NOT NULL,
  attempts INTEGER NOT NULL,
  last_error TEXT,
  PRIMARY KEY (alert_id, recipient_role, recipient_id)
);
CREATE TABLE IF NOT EXISTS tokens (
  token TEXT PRIMARY KEY,
  principal_id TEXT NOT NULL,
  role TEXT NOT NULL CHECK (role IN ('admin', 'employee', 'auditor'))
);
)sql";

/// Everything the in-memory state is rebuilt from at startup.
struct StoreSnapshot {
  std::vector<EmployeeRecord> employees;
  std::vector<GalleryEntry> gallery;
  std::vector<WorkSession> sessions;
  std::vector<CheckSchedule> schedules;
  std::vector<ArchiveRecord> archive;
  std::vector<AlertEvent> alerts;
  std::vector<std::pair<std::string, Recipient>> delivered;
  std::vector<ApiToken> tokens;
  std::uint64_t session_counter = 0;
  std::uint64_t alert_counter = 0;
};

class Store {
 public:
  // ":memory:" gives a private in-memory database.
  explicit Store(const std::string& path) : path_(path) {
    if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX, nullptr) != SQLITE_OK) {
      std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
      sqlite3_close(db_);
      fail(ErrorCode::StorageError, "cannot open store " + path + ": " + msg);
    }
    sqlite3_busy_timeout(db_, 5000);
    exec("PRAGMA foreign_keys = ON");
    if (path != ":memory:") exec("PRAGMA journal_mode = WAL");
    exec("PRAGMA synchronous = FULL");
    exec(kSchema);
  }
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;
  ~Store() { sqlite3_close(db_); }

  const std::string& path() const noexcept { return path_; }
  sqlite3* handle() const noexcept { return db_; }

  void exec(const char* text) {
    char* err = nullptr;
    if (sqlite3_exec(db_, text, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      fail(ErrorCode::StorageError, msg);
    }
  }

  class Transaction {
   public:
    explicit Transaction(Store& s) : store_(s) { store_.exec("BEGIN IMMEDIATE"); }
    Transaction(const Transaction&) = delete;
    Transaction& operator=(const Transaction&) = delete;
    ~Transaction() {
      if (!done_) sqlite3_exec(store_.db_, "ROLLBACK", nullptr, nullptr, nullptr);
    }
    void commit() {
      store_.exec("COMMIT");
      done_ = true;
    }

   private:
    Store& store_;
    bool done_ = false;
  };

  Transaction transaction() { return Transaction(*this); }

  // --- employees and images ---

  void insert_employee(const EmployeeRecord& r) {
    sql::Statement st(db_, "INSERT INTO employees (employee_id, name, contact, role, active) VALUES (?, ?, ?, ?, ?)");
    st.bind(1, r.employee_id).bind(2, r.name).bind(3, r.contact).bind(4, to_string(r.role)).bind(5, r.active);
    st.run();
  }

  void update_employee(const EmployeeRecord& r) {
    sql::Statement st(db_, "UPDATE employees SET name = ?, contact = ?, role = ?, active = ? WHERE employee_id = ?");
    st.bind(1, r.name).bind(2, r.contact).bind(3, to_string(r.role)).bind(4, r.active).bind(5, r.employee_id);
    st.run();
  }

  void delete_employee(const std::string& id) {
    sql::Statement st(db_, "DELETE FROM employees WHERE employee_id = ?");
    st.bind(1, id).run();
  }

  void insert_image(const std::string& image_id, const std::optional<std::string>& owner, ImageKind kind,
                    std::span<const std::uint8_t> bytes, Timestamp at) {
    sql::Statement st(db_, "INSERT INTO images (image_id, owner_id, kind, bytes, created_at) VALUES (?, ?, ?, ?, ?)");
    st.bind(1, image_id).bind(2, owner).bind(3, to_string(kind)).bind(4, bytes).bind(5, to_millis(at));
    st.run();
  }

  void delete_enrollment_images(const std::string& owner) {
    sql::Statement st(db_, "DELETE FROM images WHERE owner_id = ? AND kind = 'enrollment'");
    st.bind(1, owner).run();
  }

  std::optional<std::vector<std::uint8_t>> image(const std::string& image_id) {
    sql::Statement st(db_, "SELECT bytes FROM images WHERE image_id = ?");
    st.bind(1, image_id);
    if (!st.step()) return std::nullopt;
    return st.blob(0);
  }

  void replace_embeddings(const std::string& id, const std::vector<Embedding>& embeddings, Timestamp at) {
    sql::Statement del(db_, "DELETE FROM gallery_embeddings WHERE employee_id = ?");
    del.bind(1, id).run();
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
      sql::Statement st(db_, "INSERT INTO gallery_embeddings (employee_id, ordinal, vector, enrolled_at) VALUES (?, ?, ?, ?)");
      st.bind(1, id).bind(2, static_cast<std::int64_t>(i)).bind(3, to_bytes_f64(embeddings[i])).bind(4, to_millis(at));
      st.run();
    }
  }

  // --- sessions, checks, archive, alerts ---

  void insert_session(const WorkSession& s, const CheckSchedule& sched, std::uint64_t ordinal) {
    sql::Statement st(db_,
                      "INSERT INTO sessions (session_id, ordinal, employee_id, owner_id, started_at, ended_at, status, miss_run, "
                      "checks_done, next_slot, planned_ms) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)");
    bind_session(st.bind(1, s.session_id).bind(2, ordinal).bind(3, s.employee_id).bind(4, s.employee_id), s, 5);
    st.run();
    auto times = nlohmann::json::array();
    for (auto t : sched.check_times) times.push_back(to_millis(t));
    sql::Statement sc(db_, "INSERT INTO schedules (session_id, segment_count, rng_seed, check_times) VALUES (?, ?, ?, ?)");
    sc.bind(1, s.session_id).bind(2, static_cast<std::int64_t>(sched.segment_count)).bind(3, sched.rng_seed).bind(4, times.dump());
    sc.run();
  }

  void update_session(const WorkSession& s) {
    sql::Statement st(db_,
                      "UPDATE sessions SET started_at = ?, ended_at = ?, status = ?, miss_run = ?, checks_done = ?, "
                      "next_slot = ?, planned_ms = ? WHERE session_id = ?");
    bind_session(st, s, 1).bind(8, s.session_id);
    st.run();
  }

  void insert_check(const PresenceCheck& c) {
    sql::Statement st(db_, "INSERT INTO checks (session_id, at, outcome, best_distance, frame_ref) VALUES (?, ?, ?, ?, ?)");
    st.bind(1, c.session_id).bind(2, to_millis(c.at)).bind(3, to_string(c.outcome)).bind(4, c.best_distance).bind(5, c.frame_ref);
    st.run();
  }

  std::size_t check_count() {
    sql::Statement st(db_, "SELECT COUNT(*) FROM checks");
    st.step();
    return static_cast<std::size_t>(st.integer(0));
  }

  void append_archive(const ArchiveRecord& r) {
    sql::Statement st(db_,
                      "INSERT INTO archive (sequence, session_id, employee_id, employee_name, employee_contact, at, outcome, "
                      "best_distance, frame_ref) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)");
    st.bind(1, r.sequence).bind(2, r.check.session_id).bind(3, r.employee.employee_id).bind(4, r.employee.name);
    st.bind(5, r.employee.contact).bind(6, to_millis(r.check.at)).bind(7, to_string(r.check.outcome));
    st.bind(8, r.check.best_distance).bind(9, r.check.frame_ref);
    st.run();
  }

  void insert_alert(const AlertEvent& a, std::uint64_t ordinal) {
    sql::Statement st(db_,
                      "INSERT INTO alerts (alert_id, ordinal, session_id, employee_id, triggered_at, miss_run_length) "
                      "VALUES (?, ?, ?, ?, ?, ?)");
    st.bind(1, a.alert_id).bind(2, ordinal).bind(3, a.session_id).bind(4, a.employee_id).bind(5, to_millis(a.triggered_at));
    st.bind(6, static_cast<std::int64_t>(a.miss_run_length));
    st.run();
  }

  void record_delivery(const std::string& alert_id, const RecipientDelivery& d) {
    sql::Statement st(db_,
                      "INSERT INTO alert_deliveries (alert_id, recipient_role, recipient_id, status, attempts, last_error) "
                      "VALUES (?, ?, ?, ?, ?, ?) ON CONFLICT (alert_id, recipient_role, recipient_id) DO UPDATE SET "
                      "status = excluded.status, attempts = alert_deliveries.attempts + excluded.attempts, "
                      "last_error = excluded.last_error");
    std::optional<std::string> err;
    if (!d.last_error.empty()) err = d.last_error;
    st.bind(1, alert_id).bind(2, to_string(d.recipient.role)).bind(3, d.recipient.id).bind(4, to_string(d.status));
    st.bind(5, d.attempts).bind(6, err);
    st.run();
  }

  nlohmann::json deliveries(const std::string& alert_id) {
    sql::Statement st(db_,
                      "SELECT recipient_role, recipient_id, status, attempts, last_error FROM alert_deliveries "
                      "WHERE alert_id = ? ORDER BY recipient_role, recipient_id");
    st.bind(1, alert_id);
    auto out = nlohmann::json::array();
    while (st.step())
      out.push_back({{"recipient_role", st.text(0)},
                     {"recipient_id", st.text(1)},
                     {"status", st.text(2)},
                     {"attempts", st.integer(3)},
                     {"last_error", st.is_null(4) ? nlohmann::json() : nlohmann::json(st.text(4))}});
    return out;
  }

  // --- tokens ---

  void insert_token(const ApiToken& t) {
    sql::Statement st(db_, "INSERT INTO tokens (token, principal_id, role) VALUES (?, ?, ?)");
    st.bind(1, t.token).bind(2, t.principal_id).bind(3, to_string(t.role)).run();
  }

  // Tokens bound to an employee record (admin or employee role); auditors are separate principals.
  void delete_employee_tokens(const std::string& principal) {
    sql::Statement st(db_, "DELETE FROM tokens WHERE principal_id = ? AND role <> 'auditor'");
    st.bind(1, principal).run();
  }

  // --- startup ---

  StoreSnapshot load() {
    StoreSnapshot snap;
    std::map<std::string, std::vector<std::string>> refs;
    {
      sql::Statement st(db_, "SELECT owner_id, image_id, kind FROM images ORDER BY rowid");
      while (st.step()) {
        if (st.text(2) == "enrollment" && !st.is_null(0)) refs[st.text(0)].push_back(st.text(1));
      }
    }
    {
      sql::Statement st(db_, "SELECT employee_id, name, contact, role, active FROM employees ORDER BY employee_id");
      while (st.step()) {
        EmployeeRecord r{st.text(0), st.text(1), st.text(2), role_from_string(st.text(3)), st.integer(4) != 0, {}};
        r.enrollment_image_refs = refs[r.employee_id];
        snap.employees.push_back(std::move(r));
      }
    }
    {
      sql::Statement st(db_, "SELECT employee_id, vector, enrolled_at FROM gallery_embeddings ORDER BY employee_id, ordinal");
      while (st.step()) {
        const auto id = st.text(0);
        if (snap.gallery.empty() || snap.gallery.back().person_id != id) snap.gallery.push_back({id, {}, from_millis(st.integer(2))});
        snap.gallery.back().embeddings.push_back(from_bytes_f64(st.blob(1)));
      }
    }
    {
      sql::Statement st(db_,
                        "SELECT session_id, owner_id, started_at, ended_at, status, miss_run, checks_done, next_slot, planned_ms "
                        "FROM sessions ORDER BY ordinal");
      while (st.step()) {
        WorkSession s;
        s.session_id = st.text(0);
        s.employee_id = st.text(1);
        s.started_at = from_millis(st.integer(2));
        if (!st.is_null(3)) s.ended_at = from_millis(st.integer(3));
        s.status = session_status_from_string(st.text(4));
        s.miss_run = static_cast<std::size_t>(st.integer(5));
        s.checks_done = static_cast<std::size_t>(st.integer(6));
        s.next_slot = static_cast<std::size_t>(st.integer(7));
        s.planned_duration = Duration(st.integer(8));
        snap.sessions.push_back(std::move(s));
      }
      snap.session_counter = snap.sessions.size();
    }
    {
      sql::Statement st(db_, "SELECT session_id, segment_count, rng_seed, check_times FROM schedules");
      while (st.step()) {
        CheckSchedule c;
        c.session_id = st.text(0);
        c.segment_count = static_cast<std::size_t>(st.integer(1));
        c.rng_seed = static_cast<std::uint64_t>(st.integer(2));
        for (const auto& t : nlohmann::json::parse(st.text(3))) c.check_times.push_back(from_millis(t.get<std::int64_t>()));
        snap.schedules.push_back(std::move(c));
      }
    }
    {
      sql::Statement st(db_,
                        "SELECT sequence, session_id, employee_id, employee_name, employee_contact, at, outcome, best_distance, "
                        "frame_ref FROM archive ORDER BY sequence");
      while (st.step()) {
        ArchiveRecord r;
        r.sequence = static_cast<std::uint64_t>(st.integer(0));
        r.check = {st.text(1), from_millis(st.integer(5)), outcome_from_string(st.text(6)), st.optional_real(7), st.optional_text(8)};
        r.employee = {st.text(2), st.text(3), st.text(4)};
        snap.archive.push_back(std::move(r));
      }
    }
    {
      sql::Statement st(db_,
                        "SELECT alert_id, session_id, employee_id, triggered_at, miss_run_length FROM alerts ORDER BY ordinal");
      while (st.step())
        snap.alerts.push_back({st.text(0), st.text(1), st.text(2), from_millis(st.integer(3)),
                               static_cast<std::size_t>(st.integer(4)), {Role::admin, Role::employee}});
      snap.alert_counter = snap.alerts.size();
    }
    {
      sql::Statement st(db_, "SELECT alert_id, recipient_role, recipient_id FROM alert_deliveries WHERE status = 'delivered'");
      while (st.step()) snap.delivered.push_back({st.text(0), Recipient{role_from_string(st.text(1)), st.text(2)}});
    }
    {
      sql::Statement st(db_, "SELECT token, principal_id, role FROM tokens ORDER BY rowid");
      while (st.step()) snap.tokens.push_back({st.text(0), st.text(1), role_from_string(st.text(2))});
    }
    return snap;
  }

 private:
  static sql::Statement& bind_session(sql::Statement& st, const WorkSession& s, int first) {
    std::optional<std::int64_t> ended;
    if (s.ended_at) ended = to_millis(*s.ended_at);
    st.bind(first, to_millis(s.started_at)).bind(first + 1, ended).bind(first + 2, to_string(s.status));
    st.bind(first + 3, static_cast<std::int64_t>(s.miss_run)).bind(first + 4, static_cast<std::int64_t>(s.checks_done));
    st.bind(first + 5, static_cast<std::int64_t>(s.next_slot)).bind(first + 6, s.planned_duration.count());
    return st;
  }

  std::string path_;
  sqlite3* db_ = nullptr;
};

}  // namespace presenzia
