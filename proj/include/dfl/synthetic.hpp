#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dfl/market_data.hpp"

namespace dfl::data {

struct SyntheticSpec {
  int stocks = 200;
  int factors = 8;
  int industries = 5;
  std::vector<double> loadings;          // beta, one per factor
  std::vector<double> industry_effects;  // volatility amplitude per industry
  double nonlinearity = 0.0;             // gamma
  double noise_vol = 0.02;               // daily idiosyncratic vol
  int dates = 500;
  std::uint64_t seed = 42;
  std::string start_date = "2010-01-04";
  double churn_rate = 0.02;  // fraction of the universe swapped per month

  void validate() const {
    if (stocks < 1 || factors < 1 || industries < 1 || dates < 1) {
      throw ConfigError("synthetic spec: counts must be positive");
    }
    if (industries > 30) throw ConfigError("synthetic spec: at most 30 industries");
    if (loadings.size() != static_cast<std::size_t>(factors)) {
      throw ConfigError(strf("synthetic spec: %zu loadings for %d factors", loadings.size(),
                             factors));
    }
    if (industry_effects.size() != static_cast<std::size_t>(industries)) {
      throw ConfigError(strf("synthetic spec: %zu industry effects for %d industries",
                             industry_effects.size(), industries));
    }
    if (noise_vol < 0.0 || nonlinearity < 0.0 || churn_rate < 0.0) {
      throw ConfigError("synthetic spec: negative magnitude");
    }
  }
};

// Deterministic loading vector with given L2 norm; a seeded random direction
// so no factor is privileged.
inline std::vector<double> spread_loadings(int m, double total_norm, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> beta(static_cast<std::size_t>(m));
  double norm = 0.0;
  for (auto& b : beta) {
    b = gauss(rng);
    norm += b * b;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) norm = 1.0;
  for (auto& b : beta) b *= total_norm / norm;
  return beta;
}

// Planted-signal market: daily cross-sectional returns
//   r_i = F_i . beta + a[ind(i)] * z_ind + gamma * tanh(F_i . beta2) + eps_i
// with AR(1) factor exposures, geometric prices, and ~churn_rate of the
// universe swapped against a reserve pool at each month boundary.
inline RawData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int n = spec.stocks;
  const int m = spec.factors;
  const int pool = n + std::max(n / 4, 8);
  const std::size_t T = static_cast<std::size_t>(spec.dates);

  RawData out;
  out.calendar = TradingCalendar(dates::business_days(dates::parse(spec.start_date), T));

  std::vector<std::string> pool_ids(pool);
  std::vector<int> pool_industry(pool);
  for (int i = 0; i < pool; ++i) {
    pool_ids[i] = strf("S%04d", i + 1);
    pool_industry[i] = i % spec.industries + 1;
  }

  // Secondary loadings for the nonlinear term. Norm 3 drives tanh well into
  // saturation, so the term cannot be soaked up by a linear fit.
  std::vector<double> beta2(static_cast<std::size_t>(m));
  {
    double norm = 0.0;
    for (auto& b : beta2) {
      b = gauss(rng);
      norm += b * b;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (auto& b : beta2) b *= 3.0 / norm;
  }

  // AR(1) exposures, stationary N(0,1). High persistence keeps multi-week
  // label windows predictable from the exposure snapshot at t.
  const double rho = 0.99;
  const double innov = std::sqrt(1.0 - rho * rho);
  std::vector<std::vector<double>> exposure(pool, std::vector<double>(m));
  for (auto& row : exposure) {
    for (auto& v : row) v = gauss(rng);
  }

  std::vector<double> price(pool, 100.0);
  std::vector<int> active(n);
  for (int i = 0; i < n; ++i) active[i] = i;
  std::vector<int> reserve;
  for (int i = n; i < pool; ++i) reserve.push_back(i);

  const int swaps = static_cast<int>(std::lround(spec.churn_rate * n));

  out.universes.resize(T);
  out.panel.values.resize(T);
  out.panel.missing.resize(T);
  for (int j = 0; j < m; ++j) {
    out.panel.factor_names.push_back(strf("f%02d", j + 1));
    out.panel.factor_groups.push_back(kFactorGroupNames[j % kFactorGroupNames.size()]);
  }
  for (const auto& id : pool_ids) {
    out.prices.closes[id].assign(T, 0.0);
  }

  int prev_month = dates::parse(out.calendar.date(0)).month;
  for (std::size_t t = 0; t < T; ++t) {
    const int month = dates::parse(out.calendar.date(t)).month;
    if (t > 0 && month != prev_month && swaps > 0 && !reserve.empty()) {
      for (int s = 0; s < swaps && !reserve.empty(); ++s) {
        const std::size_t out_pos = rng() % active.size();
        const std::size_t in_pos = rng() % reserve.size();
        std::swap(active[out_pos], reserve[in_pos]);
      }
      std::sort(active.begin(), active.end());
    }
    prev_month = month;

    auto& snap = out.universes[t];
    snap.date = out.calendar.date(t);
    for (int idx : active) {
      snap.ids.push_back(pool_ids[idx]);
      snap.industries.push_back(pool_industry[idx]);
    }
    out.panel.values[t] = Tensor::zeros({static_cast<std::size_t>(n), static_cast<std::size_t>(m)});
    out.panel.missing[t] = Tensor::zeros({static_cast<std::size_t>(n), static_cast<std::size_t>(m)});
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        out.panel.values[t].at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
            exposure[active[i]][j];
      }
    }
    for (int i = 0; i < pool; ++i) {
      out.prices.closes[pool_ids[i]][t] = price[i];
    }

    if (t + 1 < T) {
      std::vector<double> industry_z(static_cast<std::size_t>(spec.industries));
      for (auto& z : industry_z) z = gauss(rng);
      for (int i = 0; i < pool; ++i) {
        double signal = 0.0;
        double signal2 = 0.0;
        for (int j = 0; j < m; ++j) {
          signal += exposure[i][j] * spec.loadings[j];
          signal2 += exposure[i][j] * beta2[j];
        }
        double r = signal + spec.nonlinearity * std::tanh(signal2);
        r += spec.industry_effects[pool_industry[i] - 1] * industry_z[pool_industry[i] - 1];
        r += spec.noise_vol * gauss(rng);
        if (r < -0.95) r = -0.95;
        price[i] *= 1.0 + r;
      }
      for (int i = 0; i < pool; ++i) {
        for (int j = 0; j < m; ++j) {
          exposure[i][j] = rho * exposure[i][j] + innov * gauss(rng);
        }
      }
    }
  }

  return out;
}

}  // namespace dfl::data
