#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dfl/csv.hpp"
#include "dfl/dates.hpp"
#include "dfl/tensor.hpp"

namespace dfl::data {

inline const std::vector<std::string> kFactorGroupNames = {"reversal", "value", "size",
                                                           "momentum", "quality"};

class TradingCalendar {
 public:
  TradingCalendar() = default;

  explicit TradingCalendar(std::vector<std::string> dates) : dates_(std::move(dates)) {
    for (std::size_t i = 0; i < dates_.size(); ++i) {
      dates::parse(dates_[i]);  // validate format
      if (i > 0 && dates_[i] <= dates_[i - 1]) {
        throw DataError("calendar not strictly increasing at '" + dates_[i] + "'");
      }
      index_[dates_[i]] = i;
    }
  }

  std::size_t size() const { return dates_.size(); }
  bool empty() const { return dates_.empty(); }
  const std::string& date(std::size_t i) const { return dates_[i]; }
  const std::vector<std::string>& dates() const { return dates_; }

  std::optional<std::size_t> index_of(const std::string& date) const {
    auto it = index_.find(date);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& date) const { return index_.count(date) != 0; }

  // First trading index with date >= d, or size() if none.
  std::size_t lower_bound(const std::string& d) const {
    return static_cast<std::size_t>(
        std::lower_bound(dates_.begin(), dates_.end(), d) - dates_.begin());
  }

  // Last trading index with date <= d, or size() if none.
  std::size_t last_leq(const std::string& d) const {
    auto it = std::upper_bound(dates_.begin(), dates_.end(), d);
    if (it == dates_.begin()) return dates_.size();
    return static_cast<std::size_t>(it - dates_.begin()) - 1;
  }

 private:
  std::vector<std::string> dates_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct UniverseSnapshot {
  std::string date;
  std::vector<std::string> ids;  // sorted, unique
  std::vector<int> industries;   // parallel to ids

  std::size_t size() const { return ids.size(); }
};

struct FactorPanel {
  std::vector<std::string> factor_names;
  std::vector<std::string> factor_groups;  // parallel to factor_names
  // Per calendar index; rows aligned with that date's UniverseSnapshot.
  std::vector<Tensor> values;
  std::vector<Tensor> missing;  // 1 = missing

  std::size_t num_factors() const { return factor_names.size(); }
};

struct PriceTable {
  std::map<std::string, std::vector<double>> closes;  // per calendar index, NaN = absent

  bool has(const std::string& id, std::size_t idx) const {
    auto it = closes.find(id);
    return it != closes.end() && idx < it->second.size() && std::isfinite(it->second[idx]);
  }

  double close(const std::string& id, std::size_t idx) const {
    auto it = closes.find(id);
    if (it == closes.end() || idx >= it->second.size()) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    return it->second[idx];
  }
};

struct RawData {
  TradingCalendar calendar;
  std::vector<UniverseSnapshot> universes;  // aligned to calendar
  FactorPanel panel;                        // raw, with missingness
  PriceTable prices;
};

struct PanelPaths {
  std::string prices;
  std::string factors;
  std::string membership;
  std::string factor_groups;
};

// ---------------------------------------------------------------------------
// CSV ingestion

inline RawData load_panel(const PanelPaths& paths) {
  RawData out;

  // prices.csv: date,stock_id,close
  auto price_table = csv::read_file(paths.prices, {"date", "stock_id", "close"});
  std::vector<std::string> dates;
  for (const auto& row : price_table.rows) dates.push_back(row[0]);
  std::sort(dates.begin(), dates.end());
  dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
  out.calendar = TradingCalendar(dates);

  const std::size_t T = out.calendar.size();
  for (std::size_t r = 0; r < price_table.rows.size(); ++r) {
    const auto& row = price_table.rows[r];
    const auto ctx = strf("%s:%zu", paths.prices.c_str(), r + 2);
    const double close = parse_double(row[2], ctx);
    if (!(close > 0.0)) {
      throw DataError(ctx + ": non-positive close for " + row[1]);
    }
    auto& series = out.prices.closes[row[1]];
    if (series.empty()) series.assign(T, std::numeric_limits<double>::quiet_NaN());
    series[*out.calendar.index_of(row[0])] = close;
  }

  // membership.csv: date,stock_id,industry_id
  auto members = csv::read_file(paths.membership, {"date", "stock_id", "industry_id"});
  std::map<std::string, std::vector<std::pair<std::string, int>>> by_date;
  for (std::size_t r = 0; r < members.rows.size(); ++r) {
    const auto& row = members.rows[r];
    const auto ctx = strf("%s:%zu", paths.membership.c_str(), r + 2);
    if (!out.calendar.contains(row[0])) {
      throw DataError(ctx + ": membership date '" + row[0] + "' not in trading calendar");
    }
    const long industry = parse_long(row[2], ctx);
    if (industry < 1 || industry > 30) {
      throw DataError(ctx + strf(": industry_id %ld outside 1..30", industry));
    }
    by_date[row[0]].emplace_back(row[1], static_cast<int>(industry));
  }
  out.universes.resize(T);
  for (std::size_t t = 0; t < T; ++t) out.universes[t].date = out.calendar.date(t);
  for (auto& [date, list] : by_date) {
    std::sort(list.begin(), list.end());
    auto& snap = out.universes[*out.calendar.index_of(date)];
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i > 0 && list[i].first == list[i - 1].first) {
        throw DataError(paths.membership + ": duplicate member '" + list[i].first + "' on " +
                        date);
      }
      snap.ids.push_back(list[i].first);
      snap.industries.push_back(list[i].second);
    }
  }

  // factor_groups.csv: factor_name,group (defines the factor order)
  auto groups = csv::read_file(paths.factor_groups, {"factor_name", "group"});
  std::unordered_map<std::string, std::size_t> factor_index;
  for (std::size_t r = 0; r < groups.rows.size(); ++r) {
    const auto& row = groups.rows[r];
    const auto ctx = strf("%s:%zu", paths.factor_groups.c_str(), r + 2);
    if (std::find(kFactorGroupNames.begin(), kFactorGroupNames.end(), row[1]) ==
        kFactorGroupNames.end()) {
      throw ParseError(ctx + ": unknown factor group '" + row[1] + "'");
    }
    if (factor_index.count(row[0]) != 0) {
      throw ParseError(ctx + ": duplicate factor '" + row[0] + "'");
    }
    factor_index[row[0]] = out.panel.factor_names.size();
    out.panel.factor_names.push_back(row[0]);
    out.panel.factor_groups.push_back(row[1]);
  }
  const std::size_t m = out.panel.num_factors();
  if (m == 0) throw ParseError(paths.factor_groups + ": no factors defined");

  out.panel.values.resize(T);
  out.panel.missing.resize(T);
  std::vector<std::unordered_map<std::string, std::size_t>> row_of(T);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t n = out.universes[t].size();
    out.panel.values[t] = Tensor::zeros({n, m});
    out.panel.missing[t] = Tensor::ones({n, m});
    for (std::size_t i = 0; i < n; ++i) row_of[t][out.universes[t].ids[i]] = i;
  }

  // factors.csv: date,stock_id,factor_name,value (missing = absent row)
  auto factors = csv::read_file(paths.factors, {"date", "stock_id", "factor_name", "value"});
  for (std::size_t r = 0; r < factors.rows.size(); ++r) {
    const auto& row = factors.rows[r];
    const auto ctx = strf("%s:%zu", paths.factors.c_str(), r + 2);
    const auto t = out.calendar.index_of(row[0]);
    if (!t) {
      throw DataError(ctx + ": factor date '" + row[0] + "' not in trading calendar");
    }
    auto stock = row_of[*t].find(row[1]);
    if (stock == row_of[*t].end()) {
      throw DataError(ctx + ": factor row for non-member stock '" + row[1] + "' on " + row[0]);
    }
    auto factor = factor_index.find(row[2]);
    if (factor == factor_index.end()) {
      throw DataError(ctx + ": unknown factor '" + row[2] + "'");
    }
    out.panel.values[*t].at(stock->second, factor->second) = parse_double(row[3], ctx);
    out.panel.missing[*t].at(stock->second, factor->second) = 0.0;
  }

  return out;
}

// Canonical form: rows sorted by (date, stock, factor-order); shortest
// round-trip number formatting.
inline void write_panel(const RawData& raw, const PanelPaths& paths) {
  {
    csv::Writer w(paths.prices, {"date", "stock_id", "close"});
    for (std::size_t t = 0; t < raw.calendar.size(); ++t) {
      for (const auto& [id, series] : raw.prices.closes) {
        if (std::isfinite(series[t])) {
          w.row({raw.calendar.date(t), id, format_double(series[t])});
        }
      }
    }
  }
  {
    csv::Writer w(paths.membership, {"date", "stock_id", "industry_id"});
    for (const auto& snap : raw.universes) {
      for (std::size_t i = 0; i < snap.size(); ++i) {
        w.row({snap.date, snap.ids[i], strf("%d", snap.industries[i])});
      }
    }
  }
  {
    csv::Writer w(paths.factor_groups, {"factor_name", "group"});
    for (std::size_t j = 0; j < raw.panel.num_factors(); ++j) {
      w.row({raw.panel.factor_names[j], raw.panel.factor_groups[j]});
    }
  }
  {
    csv::Writer w(paths.factors, {"date", "stock_id", "factor_name", "value"});
    for (std::size_t t = 0; t < raw.calendar.size(); ++t) {
      const auto& snap = raw.universes[t];
      for (std::size_t i = 0; i < snap.size(); ++i) {
        for (std::size_t j = 0; j < raw.panel.num_factors(); ++j) {
          if (raw.panel.missing[t].at(i, j) == 0.0) {
            w.row({snap.date, snap.ids[i], raw.panel.factor_names[j],
                   format_double(raw.panel.values[t].at(i, j))});
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Forward returns

struct ReturnPanel {
  std::vector<int> horizons;
  // per horizon: per calendar index: per member of that date's universe
  std::map<int, std::vector<std::vector<double>>> values;
  std::map<int, std::vector<std::vector<bool>>> valid;

  bool has_full_row(int k, std::size_t t) const {
    const auto& v = valid.at(k)[t];
    if (v.empty()) return false;
    return std::all_of(v.begin(), v.end(), [](bool b) { return b; });
  }
};

// r[i] = close(t+k)/close(t) - 1, aligned with the (cleaned) universe rows.
inline ReturnPanel forward_returns(const PriceTable& prices, const TradingCalendar& calendar,
                                   const std::vector<UniverseSnapshot>& universes,
                                   const std::vector<int>& horizons) {
  ReturnPanel out;
  out.horizons = horizons;
  const std::size_t T = calendar.size();
  for (int k : horizons) {
    if (k < 1) throw DataError(strf("forward horizon %d must be positive", k));
    auto& vals = out.values[k];
    auto& ok = out.valid[k];
    vals.resize(T);
    ok.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      const auto& snap = universes[t];
      vals[t].assign(snap.size(), 0.0);
      ok[t].assign(snap.size(), false);
      if (t + static_cast<std::size_t>(k) >= T) continue;  // no forward window
      for (std::size_t i = 0; i < snap.size(); ++i) {
        const double p0 = prices.close(snap.ids[i], t);
        const double p1 = prices.close(snap.ids[i], t + static_cast<std::size_t>(k));
        if (std::isfinite(p0) && std::isfinite(p1)) {
          if (p0 <= 0.0 || p1 <= 0.0) {
            throw DataError("non-positive price for " + snap.ids[i] + " near " + snap.date);
          }
          vals[t][i] = p1 / p0 - 1.0;
          ok[t][i] = true;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-section cleaning

struct CleanResult {
  Tensor values;                  // kept rows only, fully imputed
  std::vector<std::size_t> kept;  // row indices into the input
  bool skipped = false;           // fewer than 3 survivors
  std::vector<std::string> notes;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median-impute per column, drop stocks with more than half their factors
// missing, then winsorize each column at +-5 population std. The clip is
// iterated to a fixed point so the whole operation is idempotent.
inline CleanResult clean_cross_section(const Tensor& values, const Tensor& missing) {
  if (!values.same_shape(missing)) {
    throw DimensionError("clean_cross_section: mask shape mismatch");
  }
  const std::size_t n = values.rows(), m = values.cols();
  CleanResult out;

  for (std::size_t i = 0; i < n; ++i) {
    std::size_t absent = 0;
    for (std::size_t j = 0; j < m; ++j) absent += missing.at(i, j) != 0.0 ? 1 : 0;
    if (2 * absent > m) {
      out.notes.push_back(strf("dropped row %zu: %zu of %zu factors missing", i, absent, m));
    } else {
      out.kept.push_back(i);
    }
  }
  if (out.kept.size() < 3) {
    out.skipped = true;
    out.notes.push_back(strf("date skipped: %zu surviving stocks", out.kept.size()));
    return out;
  }

  const std::size_t nk = out.kept.size();
  out.values = Tensor::zeros({nk, m});
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> present;
    for (std::size_t r = 0; r < nk; ++r) {
      const std::size_t i = out.kept[r];
      if (missing.at(i, j) == 0.0) present.push_back(values.at(i, j));
    }
    const double med = median_of(present);
    for (std::size_t r = 0; r < nk; ++r) {
      const std::size_t i = out.kept[r];
      out.values.at(r, j) = missing.at(i, j) == 0.0 ? values.at(i, j) : med;
    }

    for (int pass = 0; pass < 2000; ++pass) {
      double mean = 0.0;
      for (std::size_t r = 0; r < nk; ++r) mean += out.values.at(r, j);
      mean /= static_cast<double>(nk);
      double var = 0.0;
      for (std::size_t r = 0; r < nk; ++r) {
        const double c = out.values.at(r, j) - mean;
        var += c * c;
      }
      var /= static_cast<double>(nk);
      const double band = 5.0 * std::sqrt(var);
      // Clip only past a relative slack so the fixed point is reached exactly
      // and a second application is a no-op.
      const double slack = 1e-12 * std::max(1.0, std::fabs(mean) + band);
      bool clipped = false;
      for (std::size_t r = 0; r < nk; ++r) {
        double& v = out.values.at(r, j);
        if (v > mean + band + slack) {
          v = mean + band;
          clipped = true;
        } else if (v < mean - band - slack) {
          v = mean - band;
          clipped = true;
        }
      }
      if (!clipped) break;
    }
  }
  return out;
}

}  // namespace dfl::data
