#pragma once

#include <chrono>
#include <cstdint>
#include <functional>

namespace presenzia {

using Duration = std::chrono::milliseconds;
using Timestamp = std::chrono::sys_time<Duration>;
using ClockFn = std::function<Timestamp()>;

inline Timestamp system_now() { return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now()); }

inline std::int64_t to_millis(Timestamp t) noexcept { return t.time_since_epoch().count(); }
inline Timestamp from_millis(std::int64_t ms) noexcept { return Timestamp(Duration(ms)); }

}  // namespace presenzia
