#pragma once

#include <string>
#include <vector>

#include "dfl/market_data.hpp"
#include "dfl/stock_graph.hpp"

namespace dfl::data {

// Fully prepared research panel: cleaned cross-sections, per-date graphs,
// forward returns aligned with the cleaned universes.
struct Dataset {
  TradingCalendar calendar;
  std::vector<UniverseSnapshot> universes;  // post-cleaning membership
  FactorPanel panel;                        // cleaned values, empty missing masks
  ReturnPanel returns;
  std::vector<graph::GraphSnapshot> graphs;
  PriceTable prices;
  std::vector<bool> active;  // date usable (>= 3 surviving stocks)
  std::vector<std::string> warnings;

  std::size_t num_factors() const { return panel.num_factors(); }
};

inline Dataset build_dataset(const RawData& raw, const std::vector<int>& horizons) {
  Dataset ds;
  ds.calendar = raw.calendar;
  ds.prices = raw.prices;
  ds.panel.factor_names = raw.panel.factor_names;
  ds.panel.factor_groups = raw.panel.factor_groups;

  const std::size_t T = ds.calendar.size();
  ds.universes.resize(T);
  ds.panel.values.resize(T);
  ds.panel.missing.resize(T);
  ds.graphs.resize(T);
  ds.active.assign(T, false);

  for (std::size_t t = 0; t < T; ++t) {
    ds.universes[t].date = ds.calendar.date(t);
    const auto& snap = raw.universes[t];
    if (snap.size() == 0) {
      ds.warnings.push_back("no members on " + ds.calendar.date(t) + "; date skipped");
      continue;
    }
    CleanResult cleaned = clean_cross_section(raw.panel.values[t], raw.panel.missing[t]);
    for (const auto& note : cleaned.notes) {
      ds.warnings.push_back(ds.calendar.date(t) + ": " + note);
    }
    if (cleaned.skipped) continue;

    auto& universe = ds.universes[t];
    for (std::size_t r : cleaned.kept) {
      universe.ids.push_back(snap.ids[r]);
      universe.industries.push_back(snap.industries[r]);
    }
    ds.panel.values[t] = std::move(cleaned.values);
    ds.panel.missing[t] = Tensor::zeros(ds.panel.values[t].shape());
    ds.graphs[t] = graph::build_industry_mask(universe);
    ds.active[t] = true;
  }

  ds.returns = forward_returns(ds.prices, ds.calendar, ds.universes, horizons);
  return ds;
}

// Point-in-time audit over the assembled pipeline: every per-date artifact
// must only reference inputs dated at or before its own date; forward returns
// are the labelled exception and must come from prices exactly k steps ahead.
inline std::vector<std::string> audit_point_in_time(const Dataset& ds) {
  std::vector<std::string> violations;
  const std::size_t T = ds.calendar.size();
  for (std::size_t t = 0; t < T; ++t) {
    if (ds.universes[t].date != ds.calendar.date(t)) {
      violations.push_back(strf("universe at index %zu has mismatched date stamp", t));
    }
    if (ds.graphs[t].date != ds.universes[t].date && ds.active[t]) {
      violations.push_back(strf("graph at index %zu has mismatched date stamp", t));
    }
    if (ds.active[t] && ds.panel.values[t].rows() != ds.universes[t].size()) {
      violations.push_back(strf("factor rows at index %zu not aligned with universe", t));
    }
    for (int k : ds.returns.horizons) {
      const auto& vals = ds.returns.values.at(k)[t];
      const auto& ok = ds.returns.valid.at(k)[t];
      for (std::size_t i = 0; i < vals.size(); ++i) {
        if (!ok[i]) continue;
        const std::size_t ahead = t + static_cast<std::size_t>(k);
        if (ahead >= T) {
          violations.push_back(strf("return at index %zu horizon %d lacks a forward date", t, k));
          break;
        }
        const auto& id = ds.universes[t].ids[i];
        const double p0 = ds.prices.close(id, t);
        const double p1 = ds.prices.close(id, ahead);
        const double expect = p1 / p0 - 1.0;
        if (std::fabs(expect - vals[i]) > 1e-12) {
          violations.push_back(
              strf("return at index %zu horizon %d stock %s not reproducible from prices", t, k,
                   id.c_str()));
          break;
        }
      }
    }
  }
  return violations;
}

}  // namespace dfl::data
