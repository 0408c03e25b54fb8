#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfl/backtest.hpp"
#include "dfl/baselines.hpp"
#include "dfl/checkpoint.hpp"
#include "dfl/dataset.hpp"
#include "dfl/split.hpp"
#include "dfl/synthetic.hpp"
#include "dfl/train.hpp"

namespace dfl::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline json default_config() {
  return json{
      {"seed", 42},
      {"out", "out"},
      {"data",
       {{"synthetic",
         {{"stocks", 200},
          {"factors", 8},
          {"industries", 5},
          {"dates", 1000},
          {"signal_vol", 0.006},
          {"industry_vol", 0.004},
          {"nonlinearity", 0.0},
          {"noise_vol", 0.02},
          {"churn_rate", 0.02},
          {"start_date", "2010-01-04"}}}}},
      {"model",
       {{"type", "dmfm"},
        {"hidden_width", 32},
        {"gat_heads", 1},
        {"attn_slope", 0.2},
        {"act_slope", 0.01},
        {"horizons", {3, 5, 10, 15, 20}}}},
      {"train",
       {{"learning_rate", 1e-3},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"window", 32},
        {"max_epochs", 50},
        {"patience", 5},
        {"lambda_d", 1.0},
        {"lambda_b", 1.0},
        {"lambda_c", 1.0},
        {"epsilon", 1e-8}}},
      {"split", {{"first_test_start", "2013-01-01"}, {"groups", 1}}},
      {"backtest",
       {{"fraction", 0.1},
        {"cost_rate", 0.004},
        {"horizon", 20},
        {"benchmark", "equal_weight"}}},
      {"models", {"dmfm", "linear", "ew"}},
  };
}

inline void deep_merge(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object()) {
      deep_merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

inline void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;  // plain string
  }
  json* node = &config;
  for (const auto& key : split(path, '.')) {
    node = &(*node)[key];
  }
  *node = value;
}

struct RunConfig {
  json doc;  // merged config, hashed into the manifest
  std::string config_hash;

  bool synthetic = true;
  data::SyntheticSpec synth;
  data::PanelPaths files;

  std::string model_type = "dmfm";
  model::ModelConfig model_config;
  objective::TrainConfig train_config;
  bt::BacktestConfig backtest_config;
  std::string split_first_test;
  int split_groups = 1;
  std::vector<std::string> comparison_models;
  fs::path out_dir;
  std::uint64_t seed = 42;
};

inline RunConfig parse_config(json doc) {
  RunConfig cfg;
  if (const char* env_seed = std::getenv("DFL_SEED")) {
    doc["seed"] = static_cast<std::uint64_t>(
        parse_long(env_seed, "DFL_SEED"));
  }
  cfg.doc = doc;
  {
    // the hash identifies the experiment; where it lands is not part of it
    json hashed = doc;
    hashed.erase("out");
    cfg.config_hash = hash_hex(hashed.dump());
  }
  cfg.seed = doc.at("seed").get<std::uint64_t>();
  cfg.out_dir = doc.at("out").get<std::string>();

  const json& data = doc.at("data");
  const bool has_synth = data.contains("synthetic");
  const bool has_files = data.contains("files");
  if (has_synth == has_files) {
    throw ConfigError("config: exactly one of data.synthetic / data.files required");
  }
  cfg.synthetic = has_synth;
  if (has_synth) {
    const json& s = data.at("synthetic");
    cfg.synth.stocks = s.at("stocks").get<int>();
    cfg.synth.factors = s.at("factors").get<int>();
    cfg.synth.industries = s.at("industries").get<int>();
    cfg.synth.dates = s.at("dates").get<int>();
    cfg.synth.nonlinearity = s.value("nonlinearity", 0.0);
    cfg.synth.noise_vol = s.value("noise_vol", 0.02);
    cfg.synth.churn_rate = s.value("churn_rate", 0.02);
    cfg.synth.start_date = s.value("start_date", std::string("2010-01-04"));
    cfg.synth.seed = s.value("seed", cfg.seed);
    if (s.contains("loadings")) {
      cfg.synth.loadings = s.at("loadings").get<std::vector<double>>();
    } else {
      cfg.synth.loadings = data::spread_loadings(
          cfg.synth.factors, s.value("signal_vol", 0.006), cfg.synth.seed + 1000);
    }
    if (s.contains("industry_effects")) {
      cfg.synth.industry_effects = s.at("industry_effects").get<std::vector<double>>();
    } else {
      cfg.synth.industry_effects.assign(static_cast<std::size_t>(cfg.synth.industries),
                                        s.value("industry_vol", 0.004));
    }
  } else {
    const json& f = data.at("files");
    cfg.files = {f.at("prices").get<std::string>(), f.at("factors").get<std::string>(),
                 f.at("membership").get<std::string>(),
                 f.at("factor_groups").get<std::string>()};
  }

  const json& m = doc.at("model");
  cfg.model_type = m.at("type").get<std::string>();
  cfg.model_config.hidden_width = m.at("hidden_width").get<int>();
  cfg.model_config.gat_heads = m.at("gat_heads").get<int>();
  cfg.model_config.attn_slope = m.at("attn_slope").get<double>();
  cfg.model_config.act_slope = m.at("act_slope").get<double>();
  cfg.model_config.horizons = m.at("horizons").get<std::vector<int>>();
  cfg.model_config.seed = m.value("seed", cfg.seed * 7 + 1);
  cfg.model_config.validate();

  const json& t = doc.at("train");
  cfg.train_config.learning_rate = t.at("learning_rate").get<double>();
  cfg.train_config.beta1 = t.at("beta1").get<double>();
  cfg.train_config.beta2 = t.at("beta2").get<double>();
  cfg.train_config.window = t.at("window").get<int>();
  cfg.train_config.max_epochs = t.at("max_epochs").get<int>();
  cfg.train_config.patience = t.at("patience").get<int>();
  cfg.train_config.lambda_d = t.at("lambda_d").get<double>();
  cfg.train_config.lambda_b = t.at("lambda_b").get<double>();
  cfg.train_config.lambda_c = t.at("lambda_c").get<double>();
  cfg.train_config.epsilon = t.at("epsilon").get<double>();
  cfg.train_config.validate();

  const json& b = doc.at("backtest");
  cfg.backtest_config.fraction = b.at("fraction").get<double>();
  cfg.backtest_config.cost_rate = b.at("cost_rate").get<double>();
  cfg.backtest_config.horizon = b.at("horizon").get<int>();
  cfg.backtest_config.benchmark = b.at("benchmark").get<std::string>();
  cfg.backtest_config.validate();
  if (std::find(cfg.model_config.horizons.begin(), cfg.model_config.horizons.end(),
                cfg.backtest_config.horizon) == cfg.model_config.horizons.end()) {
    throw ConfigError("config: backtest.horizon must be one of model.horizons");
  }

  cfg.split_first_test = doc.at("split").at("first_test_start").get<std::string>();
  cfg.split_groups = doc.at("split").at("groups").get<int>();
  cfg.comparison_models = doc.at("models").get<std::vector<std::string>>();

  return cfg;
}

inline RunConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides) {
  json doc = default_config();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json user;
    try {
      in >> user;
    } catch (const json::exception& e) {
      throw ParseError("config '" + path + "': " + e.what());
    }
    deep_merge(doc, user);
  }
  for (const auto& assignment : overrides) apply_override(doc, assignment);
  return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Run context: output files, warnings, manifest, run.log, exit code

class RunContext {
 public:
  RunContext(const RunConfig& cfg, std::string command)
      : cfg_(cfg), command_(std::move(command)) {
    fs::create_directories(cfg.out_dir);
  }

  const RunConfig& config() const { return cfg_; }

  fs::path path(const std::string& name) const { return cfg_.out_dir / name; }

  void produced(const std::string& name) { files_.push_back(name); }

  void warn(const std::string& message) { warnings_.push_back(message); }
  void warn_all(const std::vector<std::string>& messages) {
    for (const auto& m : messages) warnings_.push_back(m);
  }
  void error(const std::string& message) { errors_.push_back(message); }

  int finish() {
    {
      std::ofstream log(path("run.log"));
      for (const auto& w : warnings_) log << "warning: " << w << "\n";
      for (const auto& e : errors_) log << "error: " << e << "\n";
    }
    files_.push_back("run.log");

    json manifest;
    manifest["command"] = command_;
    manifest["config_hash"] = cfg_.config_hash;
    std::sort(files_.begin(), files_.end());
    files_.erase(std::unique(files_.begin(), files_.end()), files_.end());
    manifest["files"] = files_;
    std::ofstream out(path("manifest.json"));
    out << manifest.dump(1) << "\n";

    return errors_.empty() ? 0 : 1;
  }

 private:
  const RunConfig& cfg_;
  std::string command_;
  std::vector<std::string> files_;
  std::vector<std::string> warnings_;
  std::vector<std::string> errors_;
};

inline data::RawData acquire_raw(const RunConfig& cfg) {
  if (cfg.synthetic) return data::generate_synthetic(cfg.synth);
  return data::load_panel(cfg.files);
}

inline data::Dataset prepare_dataset(const RunConfig& cfg) {
  return data::build_dataset(acquire_raw(cfg), cfg.model_config.horizons);
}

inline std::string group_tag(std::size_t g) { return strf("g%02zu", g); }

inline bool is_learned(const std::string& type) {
  return type == "dmfm" || type == "mlp" || type == "mgat";
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_synth(const RunConfig& cfg) {
  RunContext ctx(cfg, "synth");
  if (!cfg.synthetic) {
    ctx.error("synth requires a data.synthetic block");
    return ctx.finish();
  }
  data::RawData raw = data::generate_synthetic(cfg.synth);
  data::PanelPaths paths{ctx.path("prices.csv").string(), ctx.path("factors.csv").string(),
                         ctx.path("membership.csv").string(),
                         ctx.path("factor_groups.csv").string()};
  data::write_panel(raw, paths);
  for (const char* name : {"prices.csv", "factors.csv", "membership.csv", "factor_groups.csv"}) {
    ctx.produced(name);
  }
  return ctx.finish();
}

inline int cmd_train(const RunConfig& cfg) {
  RunContext ctx(cfg, "train");
  try {
    if (!is_learned(cfg.model_type)) {
      throw ConfigError("train: model type '" + cfg.model_type + "' has no parameters to fit");
    }
    data::Dataset ds = prepare_dataset(cfg);
    ctx.warn_all(ds.warnings);
    data::SplitPlan plan = data::make_split_plan(ds.calendar, cfg.split_first_test,
                                                 cfg.split_groups, cfg.model_config.horizons);

    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
      model::ModelConfig mc = cfg.model_config;
      mc.seed = cfg.model_config.seed + g;
      model::DeepFactorModel m(model::parse_kind(cfg.model_type), mc, ds.num_factors());
      auto result = objective::train(m, plan.groups[g], ds, cfg.train_config,
                                     cfg.seed * 13 + 5 + g);
      ctx.warn_all(result.warnings);

      const std::string ckpt = "ckpt_" + cfg.model_type + "_" + group_tag(g) + ".json";
      model::save_checkpoint(ctx.path(ckpt).string(), m, ds.panel.factor_names);
      ctx.produced(ckpt);

      const std::string hist = "history_" + cfg.model_type + "_" + group_tag(g) + ".csv";
      csv::Writer w(ctx.path(hist).string(),
                    {"epoch", "train_loss", "valid_loss", "valid_mean_ic_k20"});
      for (const auto& rec : result.history) {
        w.row({strf("%d", rec.epoch), format_double(rec.train_loss),
               format_double(rec.valid_loss), format_double(rec.valid_mean_ic)});
      }
      ctx.produced(hist);
    }
  } catch (const Error& e) {
    ctx.error(e.what());
  }
  return ctx.finish();
}

// Scores for every active date in [day-before-test-start, test-end] of each
// split group, produced by that group's model.
inline bt::ScoreSeries build_scores(const std::string& type, const RunConfig& cfg,
                                    const data::Dataset& ds, const data::SplitPlan& plan,
                                    RunContext& ctx) {
  bt::ScoreSeries scores;
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const auto& group = plan.groups[g];
    auto test_idx = data::trading_indices(ds.calendar, group.test);
    if (test_idx.empty()) continue;
    if (test_idx.front() > 0) {
      test_idx.insert(test_idx.begin(), test_idx.front() - 1);  // score for 1st rebalance
    }

    if (is_learned(type)) {
      const std::string ckpt = "ckpt_" + type + "_" + group_tag(g) + ".json";
      const fs::path ckpt_path = ctx.path(ckpt);
      if (!fs::exists(ckpt_path)) {
        throw DataError("missing checkpoint " + ckpt + "; run the train command first");
      }
      auto loaded = model::load_checkpoint(ckpt_path.string());
      if (loaded.factor_names != ds.panel.factor_names) {
        throw DataError("checkpoint " + ckpt + " was trained on different factors");
      }
      for (std::size_t t : test_idx) {
        if (!ds.active[t]) continue;
        scores[t] = loaded.model.scores(ds.panel.values[t], ds.graphs[t],
                                        cfg.backtest_config.horizon);
      }
    } else if (type == "linear") {
      auto train_idx =
          objective::usable_dates(ds, group.train, {cfg.backtest_config.horizon});
      auto fitted = baselines::fit_linear(ds, train_idx, cfg.backtest_config.horizon);
      for (std::size_t t : test_idx) {
        if (ds.active[t]) scores[t] = baselines::linear_scores(fitted, ds.panel.values[t]);
      }
    } else if (type == "ew") {
      auto train_idx =
          objective::usable_dates(ds, group.train, {cfg.backtest_config.horizon});
      auto fitted = baselines::fit_ew(ds, train_idx, cfg.backtest_config.horizon);
      for (std::size_t t : test_idx) {
        if (ds.active[t]) scores[t] = baselines::ew_scores(fitted, ds.panel.values[t]);
      }
    } else {
      throw ConfigError("unknown model '" + type + "' in the comparison set");
    }
  }
  return scores;
}

inline json report_to_json(const bt::BacktestReport& report, const std::string& model_name,
                           const RunConfig& cfg) {
  json j;
  j["model"] = model_name;
  j["config"] = {{"fraction", report.config.fraction},
                 {"cost_rate", report.config.cost_rate},
                 {"horizon", report.config.horizon},
                 {"benchmark", report.config.benchmark},
                 {"config_hash", cfg.config_hash}};
  j["metrics"] = {{"alpha", report.metrics.alpha},
                  {"ir", report.metrics.ir},
                  {"sr", report.metrics.sr},
                  {"ir_flagged", report.metrics.ir_flagged},
                  {"sr_flagged", report.metrics.sr_flagged},
                  {"realized_icir", report.realized_icir},
                  {"icir_flagged", report.icir_flagged},
                  {"avg_turnover", report.avg_turnover}};
  j["final_net_value"] = report.net_value.back();
  j["final_benchmark"] = report.benchmark.back();
  j["rebalance_count"] = report.rebalances.size();
  j["warning_count"] = report.warnings.size();
  return j;
}

inline int cmd_backtest(const RunConfig& cfg) {
  RunContext ctx(cfg, "backtest");
  try {
    data::Dataset ds = prepare_dataset(cfg);
    ctx.warn_all(ds.warnings);
    data::SplitPlan plan = data::make_split_plan(ds.calendar, cfg.split_first_test,
                                                 cfg.split_groups, cfg.model_config.horizons);
    const data::DateRange full_test{plan.groups.front().test.start,
                                    plan.groups.back().test.end};

    csv::Writer comparison(ctx.path("comparison.csv").string(),
                           {"model", "alpha", "icir", "ir", "sr"});
    ctx.produced("comparison.csv");

    for (const auto& type : cfg.comparison_models) {
      bt::ScoreSeries scores = build_scores(type, cfg, ds, plan, ctx);
      bt::BacktestReport report = bt::run_backtest(scores, ds, full_test, cfg.backtest_config);
      ctx.warn_all(report.warnings);

      const std::string report_name = "report_" + type + ".json";
      {
        std::ofstream out(ctx.path(report_name));
        out << report_to_json(report, type, cfg).dump(1) << "\n";
      }
      ctx.produced(report_name);

      const std::string curve_name = "curves_" + type + ".csv";
      {
        csv::Writer w(ctx.path(curve_name).string(),
                      {"date", "net_value", "benchmark", "excess"});
        for (std::size_t i = 0; i < report.dates.size(); ++i) {
          w.row({report.dates[i], format_double(report.net_value[i]),
                 format_double(report.benchmark[i]), format_double(report.excess[i])});
        }
      }
      ctx.produced(curve_name);

      const std::string holdings_name = "holdings_" + type + ".csv";
      {
        csv::Writer w(ctx.path(holdings_name).string(),
                      {"rebalance_date", "stock_id", "weight"});
        for (const auto& rec : report.rebalances) {
          for (const auto& [id, weight] : rec.weights) {
            w.row({rec.date, id, format_double(weight)});
          }
        }
      }
      ctx.produced(holdings_name);

      comparison.row({type, format_double(report.metrics.alpha),
                      format_double(report.realized_icir), format_double(report.metrics.ir),
                      format_double(report.metrics.sr)});
    }
  } catch (const Error& e) {
    ctx.error(e.what());
  }
  return ctx.finish();
}

inline int cmd_interpret(const RunConfig& cfg) {
  RunContext ctx(cfg, "interpret");
  try {
    if (!is_learned(cfg.model_type)) {
      throw ConfigError("interpret: model type '" + cfg.model_type + "' has no attention module");
    }
    data::Dataset ds = prepare_dataset(cfg);
    ctx.warn_all(ds.warnings);
    data::SplitPlan plan = data::make_split_plan(ds.calendar, cfg.split_first_test,
                                                 cfg.split_groups, cfg.model_config.horizons);

    const std::size_t m = ds.num_factors();
    std::vector<std::string> groups_sorted;  // distinct group labels, stable order
    for (const auto& g : ds.panel.factor_groups) {
      if (std::find(groups_sorted.begin(), groups_sorted.end(), g) == groups_sorted.end()) {
        groups_sorted.push_back(g);
      }
    }

    csv::Writer by_factor(ctx.path("attn_by_factor.csv").string(),
                          {"date", "k", "factor_name", "weight"});
    csv::Writer by_group(ctx.path("attn_by_group.csv").string(),
                         {"date", "k", "group", "weight"});
    ctx.produced("attn_by_factor.csv");
    ctx.produced("attn_by_group.csv");

    std::map<int, std::vector<double>> factor_sums;
    for (int k : cfg.model_config.horizons) factor_sums[k].assign(m, 0.0);
    std::size_t date_count = 0;

    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
      const std::string ckpt = "ckpt_" + cfg.model_type + "_" + group_tag(g) + ".json";
      if (!fs::exists(ctx.path(ckpt))) {
        throw DataError("missing checkpoint " + ckpt + "; run the train command first");
      }
      auto loaded = model::load_checkpoint(ctx.path(ckpt).string());
      if (loaded.factor_names != ds.panel.factor_names) {
        throw DataError("checkpoint " + ckpt + " was trained on different factors");
      }
      for (std::size_t t : data::trading_indices(ds.calendar, plan.groups[g].test)) {
        if (!ds.active[t]) continue;
        model::DeepFactorSet set = loaded.model.evaluate(ds.panel.values[t], ds.graphs[t]);
        ++date_count;
        for (int k : set.horizons) {
          const auto& a_bar = set.a_bar.at(k);
          std::map<std::string, double> group_weight;
          for (std::size_t j = 0; j < m; ++j) {
            by_factor.row({set.date, strf("%d", k), ds.panel.factor_names[j],
                           format_double(a_bar[j])});
            group_weight[ds.panel.factor_groups[j]] += a_bar[j];
            factor_sums[k][j] += a_bar[j];
          }
          for (const auto& label : groups_sorted) {
            by_group.row({set.date, strf("%d", k), label,
                          format_double(group_weight.count(label) ? group_weight[label] : 0.0)});
          }
        }
      }
    }
    if (date_count == 0) throw DataError("interpret: no active test dates");

    csv::Writer by_factor_avg(ctx.path("attn_by_factor_avg.csv").string(),
                              {"k", "factor_name", "weight"});
    csv::Writer by_group_avg(ctx.path("attn_by_group_avg.csv").string(),
                             {"k", "group", "weight"});
    ctx.produced("attn_by_factor_avg.csv");
    ctx.produced("attn_by_group_avg.csv");
    for (int k : cfg.model_config.horizons) {
      std::map<std::string, double> group_weight;
      for (std::size_t j = 0; j < m; ++j) {
        const double avg = factor_sums[k][j] / static_cast<double>(date_count);
        by_factor_avg.row({strf("%d", k), ds.panel.factor_names[j], format_double(avg)});
        group_weight[ds.panel.factor_groups[j]] += avg;
      }
      for (const auto& label : groups_sorted) {
        by_group_avg.row({strf("%d", k), label, format_double(group_weight[label])});
      }
    }
  } catch (const Error& e) {
    ctx.error(e.what());
  }
  return ctx.finish();
}

inline int cmd_graph_stats(const RunConfig& cfg) {
  RunContext ctx(cfg, "graph-stats");
  try {
    data::Dataset ds = prepare_dataset(cfg);
    ctx.warn_all(ds.warnings);

    std::vector<graph::GraphSnapshot> snaps;
    std::vector<data::UniverseSnapshot> universes;
    for (std::size_t t = 0; t < ds.calendar.size(); ++t) {
      if (!ds.active[t]) continue;
      snaps.push_back(ds.graphs[t]);
      universes.push_back(ds.universes[t]);
    }
    if (snaps.empty()) throw DataError("graph-stats: no active dates");

    {
      csv::Writer w(ctx.path("edge_stats.csv").string(), {"date", "avg_edges"});
      for (const auto& [date, avg] : graph::edge_stats(snaps)) {
        w.row({date, format_double(avg)});
      }
      ctx.produced("edge_stats.csv");
    }
    {
      csv::Writer w(ctx.path("industry_proportions.csv").string(),
                    {"date", "industry_id", "share"});
      for (const auto& [date, shares] : graph::industry_proportions(universes)) {
        for (const auto& [industry, share] : shares) {
          w.row({date, strf("%d", industry), format_double(share)});
        }
      }
      ctx.produced("industry_proportions.csv");
    }
  } catch (const Error& e) {
    ctx.error(e.what());
  }
  return ctx.finish();
}

inline int run_command(const std::string& command, const std::string& config_path,
                       const std::vector<std::string>& overrides) {
  RunConfig cfg = load_config(config_path, overrides);
  if (command == "synth") return cmd_synth(cfg);
  if (command == "train") return cmd_train(cfg);
  if (command == "backtest") return cmd_backtest(cfg);
  if (command == "interpret") return cmd_interpret(cfg);
  if (command == "graph-stats") return cmd_graph_stats(cfg);
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace dfl::cli
