#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "presenzia/presence.hpp"
#include "test_support.hpp"

using namespace presenzia;
using namespace std::chrono_literals;

namespace {

const EmployeeSnapshot kAlice{"alice", "Alice", "alice@example.com"};

PresenceCheck check(const std::string& sid, std::int64_t at_ms, CheckOutcome o) {
  return PresenceCheck{sid, from_millis(at_ms), o, std::nullopt, std::nullopt};
}

// Run-length oracle: an alert is due at position i when the maximal non-present
// run containing i has reached exactly n by i.
std::vector<std::size_t> alert_positions_oracle(const std::vector<bool>& present, std::size_t n) {
  std::vector<std::size_t> out;
  std::size_t run_start = 0;
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (present[i]) {
      run_start = i + 1;
      continue;
    }
    if (i - run_start + 1 == n) out.push_back(i);
  }
  return out;
}

std::size_t qualifying_runs(const std::vector<bool>& present, std::size_t n) {
  std::size_t runs = 0, len = 0;
  for (std::size_t i = 0; i <= present.size(); ++i) {
    if (i == present.size() || present[i]) {
      runs += len >= n;
      len = 0;
    } else {
      ++len;
    }
  }
  return runs;
}

class FlakyNotifier final : public Notifier {
 public:
  explicit FlakyNotifier(int failures_per_recipient) : failures_(failures_per_recipient) {}
  void deliver(const AlertEvent& a, const Recipient& to) override {
    auto& f = attempts_[to.id];
    if (f++ < failures_) throw std::runtime_error("transient failure");
    delivered.push_back({a.alert_id, to});
  }
  std::vector<std::pair<std::string, Recipient>> delivered;

 private:
  int failures_;
  std::map<std::string, int> attempts_;
};

}  // namespace

TEST(Schedule, SingleSegmentInsideSpan) {
  auto s = schedule_checks(from_millis(1000), from_millis(2000), 1, 5);
  ASSERT_EQ(s.check_times.size(), 1u);
  EXPECT_GE(s.check_times[0], from_millis(1000));
  EXPECT_LT(s.check_times[0], from_millis(2000));
}

TEST(Schedule, OneTimePerSegmentStrictlyIncreasing) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t begin = static_cast<std::int64_t>(rng() % 100000);
    const std::int64_t span = 1 + static_cast<std::int64_t>(rng() % 100000);
    const std::size_t n = 1 + rng() % 12;
    if (span < static_cast<std::int64_t>(n)) continue;
    auto s = schedule_checks(from_millis(begin), from_millis(begin + span), n, rng());
    ASSERT_EQ(s.check_times.size(), n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t lo = begin + static_cast<std::int64_t>(i) * span / static_cast<std::int64_t>(n);
      const std::int64_t hi = begin + static_cast<std::int64_t>(i + 1) * span / static_cast<std::int64_t>(n);
      EXPECT_GE(to_millis(s.check_times[i]), lo);
      EXPECT_LT(to_millis(s.check_times[i]), hi);
      if (i > 0) {
        EXPECT_LT(s.check_times[i - 1], s.check_times[i]);
      }
    }
  }
}

TEST(Schedule, GoldenTraceSeed42) {
  auto s = schedule_checks(from_millis(0), from_millis(400), 4, 42);
  std::ifstream in(std::string(PRESENZIA_TEST_DATA) + "/schedule_seed42_4x400.json");
  ASSERT_TRUE(in);
  auto golden = nlohmann::json::parse(in);
  ASSERT_EQ(golden.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(to_millis(s.check_times[i]), golden[i].get<std::int64_t>());
}

TEST(Schedule, DeterministicAndRejectsBadSpan) {
  EXPECT_EQ(schedule_checks(from_millis(0), from_millis(5000), 6, 7), schedule_checks(from_millis(0), from_millis(5000), 6, 7));
  try {
    schedule_checks(from_millis(10), from_millis(10), 3, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidSpan);
  }
  EXPECT_THROW(schedule_checks(from_millis(0), from_millis(100), 0, 1), Error);
}

TEST(Tracker, StartTwiceIsSessionExists) {
  SessionTracker t;
  t.start_session("alice", from_millis(0), 8h, 1);
  try {
    t.start_session("alice", from_millis(10), 8h, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SessionExists);
  }
}

TEST(Tracker, SixHourSessionHasHourlySegments) {
  SessionTracker t(TrackingConfig{3, 6, 120s, false});
  auto [s, sched] = t.start_session("alice", from_millis(0), 6h, 9);
  EXPECT_TRUE(s.active());
  EXPECT_EQ(s.miss_run, 0u);
  ASSERT_EQ(sched.check_times.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_GE(sched.check_times[i], from_millis(0) + std::chrono::hours(i));
    EXPECT_LT(sched.check_times[i], from_millis(0) + std::chrono::hours(i + 1));
  }
  SessionTracker t2(TrackingConfig{3, 6, 120s, false});
  auto again = t2.start_session("alice", from_millis(0), 6h, 9);
  EXPECT_EQ(again.second.check_times, sched.check_times);
}

TEST(Tracker, AlertOnFourthCheckAfterPresent) {
  SessionTracker t;
  auto sid = t.start_session("alice", from_millis(0), 8h, 1).first.session_id;
  const CheckOutcome seq[] = {CheckOutcome::present, CheckOutcome::no_face, CheckOutcome::unknown_face,
                              CheckOutcome::wrong_person};
  std::vector<bool> alerted;
  for (int i = 0; i < 4; ++i) alerted.push_back(t.record_check(check(sid, i * 1000, seq[i]), kAlice).alert.has_value());
  EXPECT_EQ(alerted, (std::vector<bool>{false, false, false, true}));
  EXPECT_EQ(t.alerts().size(), 1u);
  EXPECT_EQ(t.alerts()[0].miss_run_length, 3u);
  EXPECT_EQ(t.alerts()[0].recipients, (std::vector<Role>{Role::admin, Role::employee}));
}

TEST(Tracker, ShortRunsNeverAlert) {
  SessionTracker t;
  auto sid = t.start_session("alice", from_millis(0), 8h, 1).first.session_id;
  for (auto o : {CheckOutcome::no_face, CheckOutcome::no_face, CheckOutcome::present, CheckOutcome::no_face,
                 CheckOutcome::no_face})
    EXPECT_FALSE(t.record_check(check(sid, 0, o), kAlice).alert);
  EXPECT_TRUE(t.alerts().empty());
}

TEST(Tracker, ExhaustiveSequencesMatchRunLengthOracle) {
  for (std::size_t n : {1u, 2u, 3u}) {
    for (std::uint32_t mask = 0; mask < 256; ++mask) {
      SessionTracker t(TrackingConfig{n, 6, 120s, false});
      auto sid = t.start_session("alice", from_millis(0), 8h, 1).first.session_id;
      std::vector<bool> present;
      std::vector<std::size_t> got;
      for (std::size_t i = 0; i < 8; ++i) {
        present.push_back((mask >> i) & 1u);
        auto plan = t.record_check(check(sid, static_cast<std::int64_t>(i), present.back() ? CheckOutcome::present : CheckOutcome::no_face), kAlice);
        if (plan.alert) got.push_back(i);
        if (present.back()) {
          EXPECT_EQ(plan.session.miss_run, 0u);
        }
      }
      EXPECT_EQ(got, alert_positions_oracle(present, n)) << "mask " << mask << " n " << n;
      EXPECT_EQ(got.size(), qualifying_runs(present, n));
    }
  }
}

TEST(Tracker, EndSessionRules) {
  SessionTracker t;
  auto sid = t.start_session("alice", from_millis(100), 8h, 1).first.session_id;
  auto ended = t.end_session(sid, from_millis(5000));
  EXPECT_EQ(ended.status, SessionStatus::ended);
  EXPECT_EQ(ended.ended_at, from_millis(5000));
  try {
    t.record_check(check(sid, 6000, CheckOutcome::present), kAlice);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SessionNotActive);
  }
  try {
    t.end_session(sid, from_millis(7000));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SessionNotActive);
  }
  auto sid2 = t.start_session("alice", from_millis(8000), 1h, 2).first.session_id;
  EXPECT_THROW(t.end_session(sid2, from_millis(100)), Error);
}

TEST(Tracker, OverdueSlotsBecomeNoFace) {
  SessionTracker t(TrackingConfig{3, 4, 120s, false});
  auto [s, sched] = t.start_session("alice", from_millis(0), 4h, 3);
  EXPECT_TRUE(t.overdue_checks(s.session_id, sched.check_times[0]).empty());
  const auto late = sched.check_times[1] + 121s;
  auto owed = t.overdue_checks(s.session_id, late);
  ASSERT_EQ(owed.size(), 2u);
  EXPECT_EQ(owed[0].outcome, CheckOutcome::no_face);
  EXPECT_EQ(owed[0].at, sched.check_times[0] + 120s);
  for (const auto& c : owed) t.record_check(c, kAlice);
  EXPECT_EQ(t.get(s.session_id).next_slot, 2u);
  EXPECT_TRUE(t.overdue_checks(s.session_id, late).empty());
  // An upload just before slot 2 satisfies it.
  t.record_check(check(s.session_id, to_millis(sched.check_times[2] - 60s), CheckOutcome::present), kAlice);
  EXPECT_EQ(t.get(s.session_id).next_slot, 3u);
}

TEST(Archive, SequencesGapFreeAndRoleRules) {
  SessionTracker t;
  auto s1 = t.start_session("alice", from_millis(0), 8h, 1).first.session_id;
  auto s2 = t.start_session("bob", from_millis(0), 8h, 2).first.session_id;
  const EmployeeSnapshot bob{"bob", "Bob", "bob@example.com"};
  for (int i = 0; i < 5; ++i) {
    t.record_check(check(s1, i * 100, CheckOutcome::present), kAlice);
    t.record_check(check(s2, i * 100 + 50, CheckOutcome::no_face), bob);
  }
  const auto& recs = t.archive().records();
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(recs[i].sequence, i + 1);

  auto own = t.archive().query(Role::employee, "alice", {});
  EXPECT_EQ(own.size(), 5u);
  for (const auto& r : own) EXPECT_EQ(r.check.session_id, s1);

  try {
    t.archive().query(Role::admin, "root", {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PermissionDenied);
  }
  ArchiveFilter other;
  other.employee_id = "bob";
  EXPECT_THROW(t.archive().query(Role::employee, "alice", other), Error);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    ArchiveFilter f;
    f.from = from_millis(static_cast<std::int64_t>(rng() % 500));
    f.to = *f.from + Duration(static_cast<std::int64_t>(rng() % 300));
    auto got = t.archive().query(Role::auditor, "audit", f);
    std::vector<ArchiveRecord> expected;
    for (const auto& r : recs)
      if (r.check.at >= *f.from && r.check.at < *f.to) expected.push_back(r);
    EXPECT_EQ(got, expected);
  }
  Archive a;
  EXPECT_THROW(a.append(ArchiveRecord{5, {}, {}}), Error);
}

TEST(Dispatch, OneLogLinePerRecipient) {
  std::ostringstream sink;
  LogNotifier log(sink);
  AlertDispatcher d(log);
  AlertEvent alert{"alert-1", "s-1", "alice", from_millis(10), 3, {Role::admin, Role::employee}};
  auto receipt = dispatch_alert(alert, d);
  ASSERT_EQ(receipt.deliveries.size(), 2u);
  EXPECT_TRUE(receipt.all_delivered());
  std::istringstream lines(sink.str());
  std::string line;
  std::vector<nlohmann::json> parsed;
  while (std::getline(lines, line)) parsed.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[0]["alert_id"], "alert-1");
  EXPECT_EQ(parsed[1]["alert_id"], "alert-1");
  EXPECT_EQ(parsed[0]["recipient_role"], "admin");
  EXPECT_EQ(parsed[1]["recipient_id"], "alice");

  // Same alert again: no new lines.
  auto second = d.dispatch(alert);
  for (const auto& del : second.deliveries) EXPECT_EQ(del.status, DeliveryStatus::already_delivered);
  const auto text = sink.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}

TEST(Dispatch, RetriesThenSucceedsExactlyOnce) {
  FlakyNotifier flaky(2);
  AlertDispatcher d(flaky);
  AlertEvent alert{"alert-7", "s-1", "alice", from_millis(10), 3, {Role::admin, Role::employee}};
  auto receipt = d.dispatch(alert);
  EXPECT_TRUE(receipt.all_delivered());
  for (const auto& del : receipt.deliveries) EXPECT_EQ(del.attempts, 3);
  EXPECT_EQ(flaky.delivered.size(), 2u);
  d.dispatch(alert);
  EXPECT_EQ(flaky.delivered.size(), 2u);
}

TEST(Dispatch, PersistentFailureIsDeadLettered) {
  FlakyNotifier broken(100);
  AlertDispatcher d(broken, 3);
  AlertEvent alert{"alert-9", "s-1", "alice", from_millis(10), 3, {Role::admin, Role::employee}};
  auto receipt = d.dispatch(alert);
  EXPECT_FALSE(receipt.all_delivered());
  for (const auto& del : receipt.deliveries) {
    EXPECT_EQ(del.status, DeliveryStatus::dead_lettered);
    EXPECT_EQ(del.attempts, 4);
  }
  EXPECT_EQ(d.dead_letters().size(), 2u);
}
