#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

#include "storval/error.hpp"

namespace storval {

/// Calendar instant with hour resolution (UTC-naive).
using HourStamp = std::chrono::sys_time<std::chrono::hours>;

namespace calendar {

inline std::chrono::sys_days day_of(HourStamp t) {
  return std::chrono::floor<std::chrono::days>(t);
}

inline int hour_of_day(HourStamp t) {
  return static_cast<int>((t - day_of(t)).count());
}

/// Monday = 0, ..., Sunday = 6.
inline int iso_weekday_index(std::chrono::sys_days d) {
  return static_cast<int>(std::chrono::weekday{d}.iso_encoding()) - 1;
}

struct IsoWeek {
  int year;
  int week;
};

inline IsoWeek iso_week(std::chrono::sys_days d) {
  using namespace std::chrono;
  const sys_days thursday = d + days{3 - iso_weekday_index(d)};
  const year iso_year = year_month_day{thursday}.year();
  const sys_days jan1 = iso_year / January / 1;
  return {static_cast<int>(iso_year), static_cast<int>((thursday - jan1).count() / 7 + 1)};
}

inline bool has_week_53(int year) {
  using namespace std::chrono;
  return iso_week(sys_days{std::chrono::year{year} / December / 28}).week == 53;
}

/// Zero-based week-of-year bucket in [0, 52].
///
/// ISO week number, except that week-53 days are folded into week 52 when
/// their calendar year has no week 53 (early-January spill-over from the
/// previous ISO year).
inline int week_bucket(std::chrono::sys_days d) {
  using namespace std::chrono;
  const int week = iso_week(d).week;
  const int cal_year = static_cast<int>(year_month_day{d}.year());
  if (week == 53 && !has_week_53(cal_year)) return 51;
  return week - 1;
}

/// Parses `YYYY-MM-DDTHH:MM[:SS][Z]` (a space may replace the `T`).
/// Minutes and seconds must be zero.
inline HourStamp parse_timestamp(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  const std::string buf(text);
  const int n = std::sscanf(buf.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d", &y, &mo, &d, &sep, &h, &mi, &s);
  if (n < 6 || (sep != 'T' && sep != ' ')) {
    throw ValidationError("unparseable timestamp '" + buf + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi != 0 || s != 0) {
    throw ValidationError("timestamp '" + buf + "' is not a whole hour");
  }
  return sys_days{ymd} + hours{h};
}

inline std::string format_day(std::chrono::sys_days d) {
  using namespace std::chrono;
  const year_month_day ymd{d};
  char out[16];
  std::snprintf(out, sizeof out, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return out;
}

inline std::string format_timestamp(HourStamp t) {
  char out[8];
  std::snprintf(out, sizeof out, "T%02d:00", hour_of_day(t));
  return format_day(day_of(t)) + out;
}

inline std::chrono::sys_days parse_day(std::string_view text) {
  return day_of(parse_timestamp(std::string(text) + "T00:00"));
}

}  // namespace calendar
}  // namespace storval
