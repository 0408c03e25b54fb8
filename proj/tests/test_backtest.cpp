#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "dfl/backtest.hpp"
#include "dfl/synthetic.hpp"

using namespace dfl;
using namespace dfl::bt;

namespace {

// Hand-built flat dataset: n stocks, fixed prices, one industry.
data::Dataset flat_dataset(std::size_t n, std::size_t days, double price = 50.0) {
  data::Dataset ds;
  std::vector<std::string> dates = dates::business_days(dates::parse("2021-03-01"), days);
  ds.calendar = data::TradingCalendar(dates);
  ds.universes.resize(days);
  ds.panel.factor_names = {"f01"};
  ds.panel.factor_groups = {"value"};
  ds.panel.values.resize(days);
  ds.active.assign(days, true);
  ds.graphs.resize(days);
  for (std::size_t t = 0; t < days; ++t) {
    ds.universes[t].date = dates[t];
    for (std::size_t i = 0; i < n; ++i) {
      ds.universes[t].ids.push_back(strf("S%03zu", i + 1));
      ds.universes[t].industries.push_back(1);
    }
    ds.panel.values[t] = Tensor::zeros({n, 1});
    ds.graphs[t] = graph::build_industry_mask(ds.universes[t]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    ds.prices.closes[strf("S%03zu", i + 1)].assign(days, price);
  }
  ds.returns = data::forward_returns(ds.prices, ds.calendar, ds.universes, {3, 20});
  return ds;
}

data::Dataset synthetic_dataset(std::uint64_t seed, int stocks = 40, int days = 200) {
  data::SyntheticSpec spec;
  spec.stocks = stocks;
  spec.factors = 3;
  spec.industries = 4;
  spec.loadings = data::spread_loadings(3, 0.004, seed + 1);
  spec.industry_effects = {0.003, 0.003, 0.003, 0.003};
  spec.nonlinearity = 0.002;
  spec.noise_vol = 0.015;
  spec.dates = days;
  spec.seed = seed;
  return data::build_dataset(data::generate_synthetic(spec), {3, 20});
}

}  // namespace

TEST_CASE("rank_and_select") {
  std::vector<std::string> ids;
  std::vector<double> scores;
  for (int i = 0; i < 10; ++i) {
    ids.push_back(strf("S%03d", i + 1));
    scores.push_back(static_cast<double>(i));
  }
  SECTION("fraction 0.1 of ten stocks is the single argmax") {
    auto sel = rank_and_select(ids, scores, 0.1);
    REQUIRE(sel == std::vector<std::string>{"S010"});
  }
  SECTION("ceil rule: 25 stocks at 0.1 select 3") {
    std::vector<std::string> ids25;
    std::vector<double> s25;
    for (int i = 0; i < 25; ++i) {
      ids25.push_back(strf("S%03d", i + 1));
      s25.push_back(static_cast<double>(i % 7));
    }
    REQUIRE(rank_and_select(ids25, s25, 0.1).size() == 3);
  }
  SECTION("ties break toward the smaller id") {
    std::vector<std::string> tie_ids = {"BBB", "AAA", "CCC"};
    std::vector<double> tie_scores = {5.0, 5.0, 1.0};
    auto sel = rank_and_select(tie_ids, tie_scores, 0.3);
    REQUIRE(sel == std::vector<std::string>{"AAA"});
  }
}

TEST_CASE("rebalance") {
  SECTION("all-cash into one stock costs one full notional") {
    PortfolioState state;
    state.net_value = 1.0;
    auto out = rebalance(state, {"AAA"}, 0.004);
    REQUIRE(out.traded == Catch::Approx(1.0));
    REQUIRE(out.cost == Catch::Approx(0.004));
    REQUIRE(out.state.net_value == Catch::Approx(0.996));
    REQUIRE(out.state.holdings.at("AAA") == Catch::Approx(1.0));
  }
  SECTION("matching holdings trade nothing") {
    PortfolioState state;
    state.net_value = 0.9;
    state.holdings = {{"AAA", 0.5}, {"BBB", 0.5}};
    auto out = rebalance(state, {"AAA", "BBB"}, 0.004);
    REQUIRE(out.traded == Catch::Approx(0.0));
    REQUIRE(out.cost == Catch::Approx(0.0));
    REQUIRE(out.state.net_value == Catch::Approx(0.9));
  }
  SECTION("zero cost rate leaves net value unchanged") {
    PortfolioState state;
    state.net_value = 1.0;
    state.holdings = {{"AAA", 1.0}};
    auto out = rebalance(state, {"BBB"}, 0.0);
    REQUIRE(out.traded == Catch::Approx(2.0));  // full sell + full buy
    REQUIRE(out.state.net_value == Catch::Approx(1.0));
  }
}

TEST_CASE("compute_metrics") {
  SECTION("portfolio equal to benchmark") {
    std::vector<double> curve = {1.0, 1.01, 1.02, 1.005, 1.03};
    auto m = compute_metrics(curve, curve);
    REQUIRE(m.alpha == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(m.ir == 0.0);
    REQUIRE(m.ir_flagged);
  }
  SECTION("constant daily return compounds in closed form") {
    std::vector<double> p = {1.0};
    std::vector<double> b = {1.0};
    for (int i = 0; i < 100; ++i) {
      p.push_back(p.back() * 1.001);
      b.push_back(1.0);
    }
    auto m = compute_metrics(p, b);
    REQUIRE(m.alpha == Catch::Approx(std::pow(1.001, 252.0) - 1.0).epsilon(1e-10));
    REQUIRE(m.sr_flagged);
    REQUIRE(m.sr == 0.0);
  }
  SECTION("scale invariance of curve levels") {
    std::mt19937_64 rng(3);
    std::vector<double> p = {1.0}, b = {1.0};
    std::normal_distribution<double> gauss(0.0005, 0.01);
    for (int i = 0; i < 60; ++i) {
      p.push_back(p.back() * (1.0 + gauss(rng)));
      b.push_back(b.back() * (1.0 + gauss(rng)));
    }
    auto m1 = compute_metrics(p, b);
    for (auto& v : p) v *= 2.0;
    for (auto& v : b) v *= 2.0;
    auto m2 = compute_metrics(p, b);
    REQUIRE(m1.alpha == Catch::Approx(m2.alpha).margin(1e-12));
    REQUIRE(m1.ir == Catch::Approx(m2.ir).margin(1e-9));
    REQUIRE(m1.sr == Catch::Approx(m2.sr).margin(1e-9));
  }
}

TEST_CASE("run_backtest on hand fixtures") {
  SECTION("single rebalance with flat prices loses exactly the cost") {
    auto ds = flat_dataset(10, 15);
    ScoreSeries scores;
    for (std::size_t t = 0; t < 15; ++t) {
      std::vector<double> s(10);
      for (std::size_t i = 0; i < 10; ++i) s[i] = static_cast<double>(i);
      scores[t] = s;
    }
    data::DateRange range{ds.calendar.date(1), ds.calendar.date(14)};  // one month
    BacktestConfig cfg;
    auto report = run_backtest(scores, ds, range, cfg);
    REQUIRE(report.rebalances.size() == 1);
    REQUIRE(report.net_value.back() == Catch::Approx(0.996).margin(1e-12));
    REQUIRE(report.benchmark.back() == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("constant scores pick the lexicographically first decile") {
    auto ds = flat_dataset(20, 10);
    ScoreSeries scores;
    for (std::size_t t = 0; t < 10; ++t) scores[t] = std::vector<double>(20, 1.0);
    data::DateRange range{ds.calendar.date(1), ds.calendar.date(9)};
    auto report = run_backtest(scores, ds, range, BacktestConfig{});
    REQUIRE(report.rebalances.size() == 1);
    REQUIRE(report.rebalances[0].weights.size() == 2);  // ceil(0.1*20)
    REQUIRE(report.rebalances[0].weights[0].first == "S001");
    REQUIRE(report.rebalances[0].weights[1].first == "S002");
  }
}

TEST_CASE("a stock losing its price stream is liquidated at the last price") {
  auto ds = flat_dataset(12, 25);
  // S001's prices stop on the 9th trading day while it is held
  for (std::size_t t = 8; t < 25; ++t) {
    ds.prices.closes["S001"][t] = std::numeric_limits<double>::quiet_NaN();
  }
  ds.returns = data::forward_returns(ds.prices, ds.calendar, ds.universes, {3, 20});

  ScoreSeries scores;
  for (std::size_t t = 0; t < 25; ++t) scores[t] = std::vector<double>(12, 1.0);
  // constant scores select S001 and S002 at the first rebalance (ceil(0.1*12)=2)
  auto report =
      run_backtest(scores, ds, {ds.calendar.date(1), ds.calendar.date(24)}, BacktestConfig{});

  bool liquidated = false, skipped = false;
  for (const auto& w : report.warnings) {
    if (w.find("liquidated S001") != std::string::npos) liquidated = true;
    if (w.find("S001 has no price") != std::string::npos) skipped = true;
  }
  REQUIRE(liquidated);
  REQUIRE(skipped);  // second rebalance cannot buy it back
  REQUIRE(report.rebalances.size() == 2);
  REQUIRE(report.rebalances[1].weights.size() == 1);
  REQUIRE(report.rebalances[1].weights[0].first == "S002");
  // flat prices: first rebalance costs 0.004, second re-deploys the cash half
  REQUIRE(report.net_value.back() ==
          Catch::Approx(0.996 * (1.0 - 0.004 * 0.5)).margin(1e-12));
}

TEST_CASE("perfect foresight matches the brute-force recomputation") {
  auto ds = synthetic_dataset(71);
  const auto indices = data::trading_indices(
      ds.calendar, {ds.calendar.date(20), ds.calendar.date(150)});

  // rebalance positions: first trading day per month within the range
  std::vector<std::size_t> rebs;
  {
    int prev_key = -1;
    for (std::size_t t : indices) {
      const auto d = dates::parse(ds.calendar.date(t));
      const int key = d.year * 12 + d.month;
      if (key != prev_key) rebs.push_back(t);
      prev_key = key;
    }
  }

  // perfect-foresight scores on the day before each rebalance: the realized
  // return from the rebalance close to the next rebalance close
  ScoreSeries scores;
  for (std::size_t r = 0; r + 1 < rebs.size(); ++r) {
    const std::size_t t_reb = rebs[r];
    const std::size_t t_next = rebs[r + 1];
    const std::size_t ts = t_reb - 1;
    const auto& ids = ds.universes[ts].ids;
    std::vector<double> s(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      s[i] = ds.prices.close(ids[i], t_next) / ds.prices.close(ids[i], t_reb) - 1.0;
    }
    scores[ts] = s;
  }

  BacktestConfig cfg;
  cfg.cost_rate = 0.0;
  auto report = run_backtest(scores, ds, {ds.calendar.date(20), ds.calendar.date(150)}, cfg);

  // brute force: period return of an equal-weight buy-and-hold of the selected
  // names equals the mean of their total returns
  std::map<std::string, std::size_t> pos_of;
  for (std::size_t pos = 0; pos < report.dates.size(); ++pos) pos_of[report.dates[pos]] = pos;

  REQUIRE(report.rebalances.size() >= 3);
  for (std::size_t r = 0; r + 1 < report.rebalances.size(); ++r) {
    const auto& rec = report.rebalances[r];
    const std::size_t p0 = pos_of.at(rec.date);
    const std::size_t p1 = pos_of.at(report.rebalances[r + 1].date);
    const std::size_t t0 = *ds.calendar.index_of(rec.date);
    const std::size_t t1 = *ds.calendar.index_of(report.rebalances[r + 1].date);

    double brute = 0;
    for (const auto& [id, w] : rec.weights) {
      brute += w * (ds.prices.close(id, t1) / ds.prices.close(id, t0));
    }
    // the curve value at the next rebalance date is pre-trade (cost 0)
    const double engine = report.net_value[p1] / report.net_value[p0];
    REQUIRE(std::fabs(engine - brute) <= 1e-13 * std::fabs(brute));

    // the same number is the mean of the selected names' period returns
    double mean_ret = 0;
    for (const auto& [id, w] : rec.weights) {
      mean_ret += ds.prices.close(id, t1) / ds.prices.close(id, t0) - 1.0;
    }
    mean_ret /= static_cast<double>(rec.weights.size());
    REQUIRE(engine - 1.0 == Catch::Approx(mean_ret).margin(1e-12));
  }

  SECTION("perfect-foresight dominance over the benchmark per period") {
    for (std::size_t r = 0; r + 1 < report.rebalances.size(); ++r) {
      const std::size_t p0 = pos_of.at(report.rebalances[r].date);
      const std::size_t p1 = pos_of.at(report.rebalances[r + 1].date);
      const double strat = report.net_value[p1] / report.net_value[p0];
      const double bench = report.benchmark[p1] / report.benchmark[p0];
      REQUIRE(strat >= bench - 1e-10);
    }
  }
}

TEST_CASE("backtest invariants on synthetic data") {
  auto ds = synthetic_dataset(72);
  std::mt19937_64 rng(7);
  ScoreSeries scores;
  for (std::size_t t = 0; t < ds.calendar.size(); ++t) {
    std::vector<double> s(ds.universes[t].size());
    std::normal_distribution<double> gauss(0, 1);
    for (auto& v : s) v = gauss(rng);
    scores[t] = s;
  }
  const data::DateRange range{ds.calendar.date(10), ds.calendar.date(190)};

  SECTION("net value stays positive") {
    auto report = run_backtest(scores, ds, range, BacktestConfig{});
    for (double nv : report.net_value) REQUIRE(nv > 0.0);
  }

  SECTION("raising costs never raises the final net value") {
    double last = std::numeric_limits<double>::infinity();
    for (double rate : {0.0, 0.004, 0.008}) {
      BacktestConfig cfg;
      cfg.cost_rate = rate;
      auto report = run_backtest(scores, ds, range, cfg);
      REQUIRE(report.net_value.back() <= last + 1e-12);
      last = report.net_value.back();
    }
  }

  SECTION("metrics recomputed from the report curves match the stored metrics") {
    auto report = run_backtest(scores, ds, range, BacktestConfig{});
    auto again = compute_metrics(report.net_value, report.benchmark);
    REQUIRE(again.alpha == Catch::Approx(report.metrics.alpha).margin(1e-10));
    REQUIRE(again.ir == Catch::Approx(report.metrics.ir).margin(1e-10));
    REQUIRE(again.sr == Catch::Approx(report.metrics.sr).margin(1e-10));
    for (std::size_t i = 0; i < report.excess.size(); ++i) {
      REQUIRE(report.excess[i] ==
              Catch::Approx(report.net_value[i] / report.benchmark[i] - 1.0).margin(1e-12));
    }
  }
}

TEST_CASE("realized icir") {
  auto ds = synthetic_dataset(73, 30, 120);
  std::vector<std::size_t> sample_dates;
  for (std::size_t t = 5; t + 25 < ds.calendar.size(); t += 21) sample_dates.push_back(t);

  SECTION("clairvoyant scores produce a flagged, guarded value") {
    ScoreSeries scores;
    for (std::size_t t : sample_dates) {
      scores[t] = ds.returns.values.at(20)[t];
    }
    auto [value, flagged] = realized_icir(scores, ds, sample_dates, 20);
    REQUIRE(flagged);
    REQUIRE(std::isfinite(value));
    REQUIRE(value > 1e5);
  }

  SECTION("sign-flipped scores negate the statistic") {
    std::mt19937_64 rng(55);
    ScoreSeries scores, flipped;
    for (std::size_t t : sample_dates) {
      std::vector<double> s(ds.universes[t].size());
      std::normal_distribution<double> gauss(0, 1);
      for (auto& v : s) v = gauss(rng);
      scores[t] = s;
      auto f = s;
      for (auto& v : f) v = -v;
      flipped[t] = f;
    }
    auto [value, flagged] = realized_icir(scores, ds, sample_dates, 20);
    auto [neg_value, neg_flagged] = realized_icir(flipped, ds, sample_dates, 20);
    REQUIRE_FALSE(flagged);
    REQUIRE_FALSE(neg_flagged);
    REQUIRE(neg_value == Catch::Approx(-value).margin(1e-9));
  }

  SECTION("random scores on null data stay inside the Monte Carlo band") {
    data::SyntheticSpec spec;
    spec.stocks = 40;
    spec.factors = 2;
    spec.industries = 3;
    spec.loadings = {0, 0};
    spec.industry_effects = {0, 0, 0};
    spec.nonlinearity = 0;
    spec.noise_vol = 0.02;
    spec.dates = 320;
    int inside = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      spec.seed = 900 + seed;
      auto null_ds = data::build_dataset(data::generate_synthetic(spec), {20});
      std::vector<std::size_t> monthly;
      for (std::size_t t = 2; t + 21 < null_ds.calendar.size(); t += 21) monthly.push_back(t);
      ScoreSeries scores;
      std::mt19937_64 rng(seed * 31 + 7);
      for (std::size_t t : monthly) {
        std::vector<double> s(null_ds.universes[t].size());
        std::normal_distribution<double> gauss(0, 1);
        for (auto& v : s) v = gauss(rng);
        scores[t] = s;
      }
      auto [value, flagged] = realized_icir(scores, null_ds, monthly, 20);
      if (!flagged && std::fabs(value) < 1.0) ++inside;
    }
    REQUIRE(inside >= 18);
  }
}
