#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dfl/dataset.hpp"
#include "dfl/objective.hpp"
#include "dfl/split.hpp"

namespace dfl::bt {

struct BacktestConfig {
  double fraction = 0.10;    // top decile
  double cost_rate = 0.004;  // per side, on traded notional
  int horizon = 20;          // scoring head
  std::string benchmark = "equal_weight";

  void validate() const {
    if (!(fraction > 0.0 && fraction <= 0.5)) {
      throw ConfigError("backtest: fraction must lie in (0, 0.5]");
    }
    if (cost_rate < 0.0) throw ConfigError("backtest: negative cost rate");
    if (horizon < 1) throw ConfigError("backtest: horizon must be positive");
    if (benchmark != "equal_weight") {
      throw ConfigError("backtest: unknown benchmark '" + benchmark + "'");
    }
  }
};

struct PortfolioState {
  std::string date;
  std::map<std::string, double> holdings;  // weight of net value
  double net_value = 1.0;
};

// ceil(fraction*n) highest scores; ties broken toward the smaller stock id.
inline std::vector<std::string> rank_and_select(const std::vector<std::string>& ids,
                                                const std::vector<double>& scores,
                                                double fraction) {
  if (ids.empty() || ids.size() != scores.size()) {
    throw DimensionError("rank_and_select: ids and scores must align and be non-empty");
  }
  const std::size_t take = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(ids.size())));
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  std::vector<std::string> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take && i < order.size(); ++i) out.push_back(ids[order[i]]);
  std::sort(out.begin(), out.end());
  return out;
}

struct RebalanceOutcome {
  PortfolioState state;
  double traded = 0;  // two-sided traded notional as a fraction of net value
  double cost = 0;
};

// Equal-weights the target set; cost_rate applies to the two-sided traded
// notional and is deducted from net value.
inline RebalanceOutcome rebalance(const PortfolioState& state,
                                  const std::vector<std::string>& targets, double cost_rate) {
  if (targets.empty()) throw DataError("rebalance: empty target set");
  RebalanceOutcome out;
  const double w = 1.0 / static_cast<double>(targets.size());

  double traded = 0;
  for (const auto& id : targets) {
    auto it = state.holdings.find(id);
    traded += std::fabs(w - (it == state.holdings.end() ? 0.0 : it->second));
  }
  for (const auto& [id, old_w] : state.holdings) {
    if (std::find(targets.begin(), targets.end(), id) == targets.end()) {
      traded += std::fabs(old_w);
    }
  }

  out.traded = traded;
  out.cost = cost_rate * traded * state.net_value;
  out.state.date = state.date;
  out.state.net_value = state.net_value - out.cost;
  for (const auto& id : targets) out.state.holdings[id] = w;
  return out;
}

struct Metrics {
  double alpha = 0;  // annualized geometric active return
  double ir = 0;
  double sr = 0;
  bool ir_flagged = false;  // zero active-return std
  bool sr_flagged = false;  // zero return std
};

// Daily curves -> (alpha, IR, SR); risk-free 0, 252 trading days, sample std.
inline Metrics compute_metrics(const std::vector<double>& portfolio,
                               const std::vector<double>& benchmark) {
  if (portfolio.size() != benchmark.size() || portfolio.size() < 2) {
    throw DimensionError("compute_metrics: need two aligned curves of length >= 2");
  }
  const std::size_t T = portfolio.size() - 1;
  std::vector<double> p(T), m(T), a(T);
  for (std::size_t t = 0; t < T; ++t) {
    p[t] = portfolio[t + 1] / portfolio[t] - 1.0;
    m[t] = benchmark[t + 1] / benchmark[t] - 1.0;
    a[t] = p[t] - m[t];
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto sample_std = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean(v);
    double ss = 0;
    for (double x : v) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
  };

  Metrics out;
  const double growth = portfolio.back() / portfolio.front();
  const double bench_growth = benchmark.back() / benchmark.front();
  out.alpha = std::pow(growth / bench_growth, 252.0 / static_cast<double>(T)) - 1.0;

  const double a_std = sample_std(a);
  if (a_std == 0.0) {
    out.ir_flagged = true;
  } else {
    out.ir = mean(a) / a_std * std::sqrt(252.0);
  }
  const double p_std = sample_std(p);
  if (p_std == 0.0) {
    out.sr_flagged = true;
  } else {
    out.sr = mean(p) / p_std * std::sqrt(252.0);
  }
  return out;
}

struct RebalanceRecord {
  std::string date;
  std::vector<std::pair<std::string, double>> weights;
  double turnover = 0;  // one-sided, traded/2
  double cost = 0;
};

struct BacktestReport {
  BacktestConfig config;
  std::vector<std::string> dates;
  std::vector<double> net_value;
  std::vector<double> benchmark;
  std::vector<double> excess;  // net_value/benchmark - 1
  Metrics metrics;
  double realized_icir = 0;
  bool icir_flagged = false;
  double avg_turnover = 0;
  std::vector<RebalanceRecord> rebalances;
  std::vector<std::string> warnings;
};

// Scores per calendar index, aligned with that date's cleaned universe.
using ScoreSeries = std::map<std::size_t, std::vector<double>>;

// ICIR of monthly-sampled ICs between the score used at each rebalance and the
// realized k-day forward return on the score date.
inline std::pair<double, bool> realized_icir(const ScoreSeries& scores,
                                             const data::Dataset& ds,
                                             const std::vector<std::size_t>& score_dates, int k) {
  if (ds.returns.values.count(k) == 0) return {0.0, true};
  std::vector<double> ics;
  for (std::size_t t : score_dates) {
    auto it = scores.find(t);
    if (it == scores.end()) continue;
    const auto& r = ds.returns.values.at(k)[t];
    const auto& ok = ds.returns.valid.at(k)[t];
    std::vector<double> f2, r2;
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      if (ok[i]) {
        f2.push_back(it->second[i]);
        r2.push_back(r[i]);
      }
    }
    if (f2.size() >= 3) ics.push_back(objective::information_coefficient(f2, r2));
  }
  if (ics.size() < 2) return {0.0, true};
  double mu = 0;
  for (double ic : ics) mu += ic;
  mu /= static_cast<double>(ics.size());
  double ss = 0;
  for (double ic : ics) ss += (ic - mu) * (ic - mu);
  const double sd = std::sqrt(ss / static_cast<double>(ics.size() - 1));
  // near-constant IC series: the epsilon guard dominates, so flag the value
  const bool degenerate = sd < 1e-6 * std::max(1.0, std::fabs(mu));
  return {objective::icir(ics), degenerate};
}

// Monthly-rebalanced long-only top-fraction portfolio with drifted holdings
// between rebalances; scores from the previous trading day, trades at the
// rebalance close. Benchmark: equal-weight universe, daily.
inline BacktestReport run_backtest(const ScoreSeries& scores, const data::Dataset& ds,
                                   const data::DateRange& range, const BacktestConfig& cfg) {
  cfg.validate();
  const auto indices = data::trading_indices(ds.calendar, range);
  if (indices.size() < 2) throw DataError("run_backtest: fewer than two trading dates in range");

  // first trading day of each calendar month inside the range
  std::vector<bool> is_rebalance(indices.size(), false);
  {
    int prev_key = -1;
    for (std::size_t pos = 0; pos < indices.size(); ++pos) {
      const auto d = dates::parse(ds.calendar.date(indices[pos]));
      const int key = d.year * 12 + d.month;
      if (key != prev_key) is_rebalance[pos] = true;
      prev_key = key;
    }
  }

  BacktestReport report;
  report.config = cfg;

  // anchor state: value(t) = anchor_nv * (cash_w + sum_i w_i * P_i(t)/P0_i)
  struct Holding {
    double weight;
    double anchor_price;
    double last_ratio;
  };
  std::map<std::string, Holding> book;
  double cash_w = 1.0;
  double anchor_nv = 1.0;
  double bench = 1.0;
  std::vector<std::size_t> score_dates;

  for (std::size_t pos = 0; pos < indices.size(); ++pos) {
    const std::size_t t = indices[pos];
    const std::string& date = ds.calendar.date(t);

    // refresh ratios; liquidate holdings whose price stream stopped
    for (auto it = book.begin(); it != book.end();) {
      if (ds.prices.has(it->first, t)) {
        it->second.last_ratio = ds.prices.close(it->first, t) / it->second.anchor_price;
        ++it;
      } else {
        cash_w += it->second.weight * it->second.last_ratio;
        report.warnings.push_back("liquidated " + it->first + " at last price on " + date);
        it = book.erase(it);
      }
    }
    double gross = cash_w;
    for (const auto& [id, h] : book) gross += h.weight * h.last_ratio;
    double nv = anchor_nv * gross;

    // daily equal-weight benchmark over the previous date's members
    if (pos > 0) {
      const std::size_t prev = indices[pos - 1];
      const auto& members = ds.universes[prev].ids;
      double sum = 0;
      std::size_t cnt = 0;
      for (const auto& id : members) {
        if (ds.prices.has(id, prev) && ds.prices.has(id, t)) {
          sum += ds.prices.close(id, t) / ds.prices.close(id, prev) - 1.0;
          ++cnt;
        }
      }
      bench *= 1.0 + (cnt > 0 ? sum / static_cast<double>(cnt) : 0.0);
    }

    if (is_rebalance[pos] && t > 0) {
      // scores from the previous trading day; roll back a few days if absent
      std::size_t ts = 0;
      bool found = false;
      for (std::size_t back = 0; back < 5; ++back) {
        if (t < back + 1) break;
        const std::size_t candidate = t - 1 - back;
        if (scores.count(candidate) != 0) {
          ts = candidate;
          found = true;
          break;
        }
      }
      if (!found) {
        report.warnings.push_back("no scores available before rebalance on " + date);
      } else {
        if (ts != t - 1) {
          report.warnings.push_back("stale scores from " + ds.calendar.date(ts) +
                                    " used for rebalance on " + date);
        }
        const auto& score_vec = scores.at(ts);
        const auto& ids = ds.universes[ts].ids;
        auto selected = rank_and_select(ids, score_vec, cfg.fraction);
        std::vector<std::string> tradable;
        for (const auto& id : selected) {
          if (ds.prices.has(id, t)) {
            tradable.push_back(id);
          } else {
            report.warnings.push_back("selected " + id + " has no price on " + date +
                                      "; skipped");
          }
        }
        if (!tradable.empty()) {
          score_dates.push_back(ts);

          PortfolioState drifted;
          drifted.date = date;
          drifted.net_value = nv;
          for (const auto& [id, h] : book) {
            drifted.holdings[id] = h.weight * h.last_ratio / gross;
          }
          RebalanceOutcome outcome = rebalance(drifted, tradable, cfg.cost_rate);
          nv = outcome.state.net_value;

          RebalanceRecord rec;
          rec.date = date;
          rec.turnover = outcome.traded / 2.0;
          rec.cost = outcome.cost;
          for (const auto& [id, w] : outcome.state.holdings) rec.weights.emplace_back(id, w);
          report.rebalances.push_back(std::move(rec));

          book.clear();
          cash_w = 0.0;
          anchor_nv = nv;
          const double w = 1.0 / static_cast<double>(tradable.size());
          for (const auto& id : tradable) {
            book[id] = {w, ds.prices.close(id, t), 1.0};
          }
        }
      }
    }

    report.dates.push_back(date);
    report.net_value.push_back(nv);
    report.benchmark.push_back(bench);
    report.excess.push_back(nv / bench - 1.0);
  }

  report.metrics = compute_metrics(report.net_value, report.benchmark);
  auto [icir_value, flagged] = realized_icir(scores, ds, score_dates, cfg.horizon);
  report.realized_icir = icir_value;
  report.icir_flagged = flagged;
  if (!report.rebalances.empty()) {
    double s = 0;
    for (const auto& rec : report.rebalances) s += rec.turnover;
    report.avg_turnover = s / static_cast<double>(report.rebalances.size());
  }
  return report;
}

}  // namespace dfl::bt
