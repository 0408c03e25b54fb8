#pragma once

#include <string>
#include <vector>

#include "dfl/dates.hpp"
#include "dfl/market_data.hpp"

namespace dfl::data {

struct DateRange {
  std::string start;  // inclusive
  std::string end;    // inclusive
};

struct SplitGroup {
  DateRange train;
  DateRange valid;
  DateRange test;
};

struct SplitPlan {
  std::vector<SplitGroup> groups;
  std::vector<int> horizons;
};

inline std::vector<std::size_t> trading_indices(const TradingCalendar& cal,
                                                const DateRange& range) {
  std::vector<std::size_t> out;
  for (std::size_t t = cal.lower_bound(range.start); t < cal.size(); ++t) {
    if (cal.date(t) > range.end) break;
    out.push_back(t);
  }
  return out;
}

// Walk-forward plan: expanding train window, six-month validation with its
// final month removed, six-month test, groups shifted by six months. The
// validation end is pulled further back if one calendar month is shorter than
// the longest label horizon in trading days.
inline SplitPlan make_split_plan(const TradingCalendar& cal, const std::string& first_test_start,
                                 int group_count, const std::vector<int>& horizons) {
  if (cal.empty()) throw PlanError("empty calendar");
  if (group_count < 1) throw PlanError("group count must be positive");
  if (horizons.empty()) throw PlanError("horizon set must not be empty");

  int max_k = 0;
  for (int k : horizons) max_k = std::max(max_k, k);

  const dates::Date first_test = dates::parse(first_test_start);
  SplitPlan plan;
  plan.horizons = horizons;

  for (int g = 0; g < group_count; ++g) {
    const dates::Date test_start = dates::add_months(first_test, 6 * g);
    const dates::Date test_end = dates::add_days(dates::add_months(test_start, 6), -1);
    const dates::Date valid_start = dates::add_months(test_start, -6);
    dates::Date valid_end = dates::add_days(dates::add_months(test_start, -1), -1);
    const dates::Date train_end = dates::add_days(valid_start, -1);

    SplitGroup group;
    group.train = {cal.date(0), dates::to_string(train_end)};
    group.test = {dates::to_string(test_start), dates::to_string(test_end)};

    const std::size_t test_first = cal.lower_bound(dates::to_string(test_start));
    if (test_first == cal.size() || cal.date(test_first) > dates::to_string(test_end)) {
      throw PlanError(strf("group %d: no trading dates in test range starting %s", g,
                           dates::to_string(test_start).c_str()));
    }

    // Gap must cover max_k trading days on top of the calendar month.
    std::size_t valid_last = cal.last_leq(dates::to_string(valid_end));
    while (valid_last != cal.size() && valid_last + static_cast<std::size_t>(max_k) >= test_first) {
      if (valid_last == 0) {
        valid_last = cal.size();
        break;
      }
      --valid_last;
    }
    if (valid_last == cal.size()) {
      throw PlanError(strf("group %d: no room for validation before %s", g,
                           dates::to_string(test_start).c_str()));
    }
    group.valid = {dates::to_string(valid_start), cal.date(valid_last)};

    if (group.valid.end < group.valid.start) {
      throw PlanError(strf("group %d: validation range empty", g));
    }
    if (trading_indices(cal, group.train).empty()) {
      throw PlanError(strf("group %d: training range empty", g));
    }
    if (trading_indices(cal, group.valid).empty()) {
      throw PlanError(strf("group %d: validation range empty", g));
    }
    plan.groups.push_back(std::move(group));
  }
  return plan;
}

// Leakage audit: within every group, train < valid < test in time, and no
// validation label window [t, t+max_k] may reach the first test date.
// Consecutive test ranges must be disjoint and adjacent. Returns violations.
inline std::vector<std::string> audit_split_plan(const SplitPlan& plan,
                                                 const TradingCalendar& cal) {
  std::vector<std::string> violations;
  int max_k = 0;
  for (int k : plan.horizons) max_k = std::max(max_k, k);

  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const auto& gr = plan.groups[g];
    if (!(gr.train.end < gr.valid.start)) {
      violations.push_back(strf("group %zu: train overlaps validation", g));
    }
    if (!(gr.valid.end < gr.test.start)) {
      violations.push_back(strf("group %zu: validation overlaps test", g));
    }
    const auto valid_idx = trading_indices(cal, gr.valid);
    const auto test_idx = trading_indices(cal, gr.test);
    if (valid_idx.empty() || test_idx.empty()) {
      violations.push_back(strf("group %zu: empty validation or test range", g));
      continue;
    }
    if (valid_idx.back() + static_cast<std::size_t>(max_k) >= test_idx.front()) {
      violations.push_back(
          strf("group %zu: validation label window [%s, +%dtd] reaches test start %s", g,
               cal.date(valid_idx.back()).c_str(), max_k, cal.date(test_idx.front()).c_str()));
    }
    if (g > 0) {
      const auto& prev = plan.groups[g - 1];
      if (!(prev.test.end < gr.test.start)) {
        violations.push_back(strf("group %zu: test range overlaps group %zu", g, g - 1));
      }
      const dates::Date expected = dates::add_days(dates::parse(prev.test.end), 1);
      if (dates::to_string(expected) != gr.test.start) {
        violations.push_back(strf("group %zu: test ranges not consecutive", g));
      }
    }
  }
  return violations;
}

}  // namespace dfl::data
