#include "rrc/util/time.hpp"

#include <ctime>

#include <fmt/format.h>

#include "rrc/error.hpp"

namespace rrc {

namespace {

std::tm utc_parts(TimePoint t) {
  const std::time_t secs = std::chrono::system_clock::to_time_t(
      std::chrono::floor<std::chrono::seconds>(t));
  std::tm tm{};
  gmtime_r(&secs, &tm);
  return tm;
}

int parse_digits(std::string_view text, std::size_t pos, std::size_t n) {
  if (pos + n > text.size()) throw Error("BadTimestamp", "timestamp too short");
  int value = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    const char c = text[i];
    if (c < '0' || c > '9') throw Error("BadTimestamp", "expected digit in timestamp");
    value = value * 10 + (c - '0');
  }
  return value;
}

void expect(std::string_view text, std::size_t pos, char c) {
  if (pos >= text.size() || text[pos] != c) {
    throw Error("BadTimestamp", fmt::format("expected '{}' at offset {}", c, pos));
  }
}

}  // namespace

Clock system_clock() {
  return [] { return std::chrono::system_clock::now(); };
}

std::string to_iso8601(TimePoint t) {
  const auto tm = utc_parts(t);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      t - std::chrono::floor<std::chrono::seconds>(t))
                      .count();
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900,
                     tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
}

std::string to_iso_date(TimePoint t) {
  const auto tm = utc_parts(t);
  return fmt::format("{:04}-{:02}-{:02}", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday);
}

TimePoint from_iso8601(std::string_view text) {
  std::tm tm{};
  tm.tm_year = parse_digits(text, 0, 4) - 1900;
  expect(text, 4, '-');
  tm.tm_mon = parse_digits(text, 5, 2) - 1;
  expect(text, 7, '-');
  tm.tm_mday = parse_digits(text, 8, 2);
  expect(text, 10, 'T');
  tm.tm_hour = parse_digits(text, 11, 2);
  expect(text, 13, ':');
  tm.tm_min = parse_digits(text, 14, 2);
  expect(text, 16, ':');
  tm.tm_sec = parse_digits(text, 17, 2);
  std::size_t pos = 19;
  std::int64_t nanos = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (digits < 9) {
        nanos = nanos * 10 + (text[pos] - '0');
        ++digits;
      }
      ++pos;
    }
    if (digits == 0) throw Error("BadTimestamp", "empty fraction in timestamp");
    for (; digits < 9; ++digits) nanos *= 10;
  }
  expect(text, pos, 'Z');
  if (pos + 1 != text.size()) throw Error("BadTimestamp", "trailing characters in timestamp");
  const std::time_t secs = timegm(&tm);
  return std::chrono::system_clock::from_time_t(secs) +
         std::chrono::duration_cast<std::chrono::system_clock::duration>(
             std::chrono::nanoseconds(nanos));
}

std::int64_t to_unix_ms(TimePoint t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

TimePoint from_unix_ms(std::int64_t ms) {
  return TimePoint(std::chrono::duration_cast<std::chrono::system_clock::duration>(
      std::chrono::milliseconds(ms)));
}

}  // namespace rrc
