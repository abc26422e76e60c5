#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace rrc {

using TimePoint = std::chrono::system_clock::time_point;

/// Injectable time source; every component that reads "now" takes one.
using Clock = std::function<TimePoint()>;

Clock system_clock();

/// `2026-10-16T08:50:00.123Z`, millisecond precision, always UTC.
std::string to_iso8601(TimePoint t);

/// Inverse of `to_iso8601`. Accepts an optional fraction of 1..9 digits.
/// Throws rrc::Error("BadTimestamp") on malformed input.
TimePoint from_iso8601(std::string_view text);

/// `2026-10-16` (UTC calendar day).
std::string to_iso_date(TimePoint t);

std::int64_t to_unix_ms(TimePoint t);
TimePoint from_unix_ms(std::int64_t ms);

}  // namespace rrc
