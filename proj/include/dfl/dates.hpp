#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "dfl/common.hpp"

namespace dfl::dates {

struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  auto operator<=>(const Date&) const = default;
};

inline bool is_leap(int y) {
  return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
}

inline int days_in_month(int y, int m) {
  static const int table[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2 && is_leap(y)) return 29;
  return table[m - 1];
}

// Days since 1970-01-01 (Howard Hinnant's civil-date algorithm).
inline std::int64_t to_days(const Date& d) {
  const int y = d.year - (d.month <= 2);
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (d.month + (d.month > 2 ? -3 : 9)) + 2) / 5 + d.day - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline Date from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

// 0 = Monday ... 6 = Sunday.
inline int weekday(const Date& d) {
  const std::int64_t z = to_days(d);
  return static_cast<int>(z >= -3 ? (z + 3) % 7 : (z + 4) % 7 + 6);
}

inline bool is_weekend(const Date& d) {
  return weekday(d) >= 5;
}

inline Date parse(const std::string& text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw ParseError("invalid ISO date '" + text + "'");
  }
  Date d;
  d.year = static_cast<int>(parse_long(text.substr(0, 4), "date"));
  d.month = static_cast<int>(parse_long(text.substr(5, 2), "date"));
  d.day = static_cast<int>(parse_long(text.substr(8, 2), "date"));
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > days_in_month(d.year, d.month)) {
    throw ParseError("invalid ISO date '" + text + "'");
  }
  return d;
}

inline std::string to_string(const Date& d) {
  return strf("%04d-%02d-%02d", d.year, d.month, d.day);
}

inline Date add_days(const Date& d, std::int64_t n) {
  return from_days(to_days(d) + n);
}

// Calendar-month shift; the day of month is clamped to the target month.
inline Date add_months(const Date& d, int n) {
  int total = d.year * 12 + (d.month - 1) + n;
  int y = total / 12;
  int m = total % 12;
  if (m < 0) {
    m += 12;
    y -= 1;
  }
  Date out{y, m + 1, d.day};
  const int dim = days_in_month(out.year, out.month);
  if (out.day > dim) out.day = dim;
  return out;
}

// Weekday-only trading calendar used by the synthetic generator.
inline std::vector<std::string> business_days(const Date& start, std::size_t count) {
  std::vector<std::string> out;
  out.reserve(count);
  Date d = start;
  while (out.size() < count) {
    if (!is_weekend(d)) out.push_back(to_string(d));
    d = add_days(d, 1);
  }
  return out;
}

inline std::vector<std::string> business_days_between(const Date& start, const Date& end) {
  std::vector<std::string> out;
  for (Date d = start; d <= end; d = add_days(d, 1)) {
    if (!is_weekend(d)) out.push_back(to_string(d));
  }
  return out;
}

}  // namespace dfl::dates
