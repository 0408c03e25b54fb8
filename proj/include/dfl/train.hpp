#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dfl/dataset.hpp"
#include "dfl/model.hpp"
#include "dfl/objective.hpp"
#include "dfl/split.hpp"

namespace dfl::objective {

class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ad::ParameterSet& params, const ad::GradMap& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& p : params.items()) {
      if (!p.trainable) continue;
      auto it = grads.find(p.name);
      if (it == grads.end()) continue;
      const Tensor& g = it->second;
      Tensor& m = moment(m_, p);
      Tensor& v = moment(v_, p);
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p.tensor[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

 private:
  Tensor& moment(std::unordered_map<std::string, Tensor>& store, const ad::Parameter& p) {
    auto it = store.find(p.name);
    if (it == store.end()) it = store.emplace(p.name, Tensor::zeros(p.tensor.shape())).first;
    return it->second;
  }

  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::unordered_map<std::string, Tensor> m_, v_;
};

// Dates inside the range that survived cleaning and carry a complete return
// vector for every horizon.
inline std::vector<std::size_t> usable_dates(const data::Dataset& ds,
                                             const data::DateRange& range,
                                             const std::vector<int>& horizons) {
  std::vector<std::size_t> out;
  for (std::size_t t : data::trading_indices(ds.calendar, range)) {
    if (!ds.active[t]) continue;
    bool complete = true;
    for (int k : horizons) {
      if (!ds.returns.has_full_row(k, t)) {
        complete = false;
        break;
      }
    }
    if (complete) out.push_back(t);
  }
  return out;
}

struct RangeEvaluation {
  double loss = 0;
  std::map<int, double> icir_term;           // c_k over the whole range
  std::map<int, std::vector<double>> ics;    // per horizon, per date
  std::map<int, double> mean_ic;             // per horizon
};

// Pure evaluation of the composite loss over a date range; one small tape per
// date, scalars combined outside the tape.
inline RangeEvaluation evaluate_range(const model::DeepFactorModel& m, const data::Dataset& ds,
                                      const std::vector<std::size_t>& dates,
                                      const TrainConfig& cfg) {
  if (dates.size() < 2) throw DataError("evaluate_range: need at least two dates");
  RangeEvaluation out;
  const auto& horizons = m.config().horizons;
  std::map<int, double> sum_d, sum_b;
  for (std::size_t t : dates) {
    model::DeepFactorSet set = m.evaluate(ds.panel.values[t], ds.graphs[t]);
    for (int k : horizons) {
      const auto& r = ds.returns.values.at(k)[t];
      out.ics[k].push_back(information_coefficient(set.f.at(k), r, cfg.epsilon));
      sum_d[k] += attention_deviation(set.f.at(k), set.f_hat.at(k));
      sum_b[k] += factor_return(set.f.at(k), r, true, cfg.epsilon);
    }
  }
  const double T = static_cast<double>(dates.size());
  double acc = 0;
  for (int k : horizons) {
    out.icir_term[k] = icir(out.ics[k], cfg.epsilon);
    double mean = 0;
    for (double ic : out.ics[k]) mean += ic;
    out.mean_ic[k] = mean / T;
    acc += cfg.lambda_d * sum_d[k] - cfg.lambda_b * sum_b[k] -
           cfg.lambda_c * out.icir_term[k] * T;
  }
  out.loss = acc / (static_cast<double>(horizons.size()) * T);
  return out;
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double valid_loss = 0;
  double valid_mean_ic = 0;  // scoring head (k=20 when present, else max k)
};

struct TrainResult {
  std::unordered_map<std::string, Tensor> best_values;
  double best_valid_loss = 0;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
  std::vector<std::string> warnings;
};

inline int scoring_horizon(const std::vector<int>& horizons) {
  for (int k : horizons) {
    if (k == 20) return k;
  }
  return horizons.back();
}

// Adaptive-moment SGD over randomly sampled consecutive-date windows from the
// train range; keeps the parameters with the lowest validation loss.
inline TrainResult train(model::DeepFactorModel& m, const data::SplitGroup& group,
                         const data::Dataset& ds, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto& horizons = m.config().horizons;
  const auto train_idx = usable_dates(ds, group.train, horizons);
  const auto valid_idx = usable_dates(ds, group.valid, horizons);
  if (train_idx.size() < 2) throw DataError("train: fewer than two usable training dates");
  if (valid_idx.size() < 2) throw DataError("train: fewer than two usable validation dates");

  const std::size_t window =
      std::min(static_cast<std::size_t>(cfg.window), train_idx.size());
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, train_idx.size() / window);

  std::mt19937_64 rng(seed);
  AdamOptimizer opt(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

  TrainResult result;
  result.best_valid_loss = std::numeric_limits<double>::infinity();
  int patience_left = cfg.patience;
  const int report_k = scoring_horizon(horizons);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double epoch_loss = 0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t span = train_idx.size() - window;
      const std::size_t start = span == 0 ? 0 : rng() % (span + 1);

      ad::Tape tape;
      std::vector<WindowDate> dates;
      dates.reserve(window);
      for (std::size_t w = 0; w < window; ++w) {
        const std::size_t t = train_idx[start + w];
        WindowDate wd;
        wd.date = ds.calendar.date(t);
        wd.fwd = m.forward(tape, ds.panel.values[t], ds.graphs[t]);
        for (int k : horizons) {
          wd.returns.emplace(k, Tensor::col_vector(ds.returns.values.at(k)[t]));
        }
        dates.push_back(std::move(wd));
      }
      TotalLoss loss = total_loss(tape, dates, cfg);
      for (const auto& w : loss.breakdown.warnings) result.warnings.push_back(w);
      epoch_loss += loss.breakdown.total;
      ad::GradMap grads = tape.backward(loss.loss);
      opt.step(m.params(), grads);
    }
    epoch_loss /= static_cast<double>(steps_per_epoch);

    RangeEvaluation valid = evaluate_range(m, ds, valid_idx, cfg);
    result.history.push_back(
        {epoch, epoch_loss, valid.loss, valid.mean_ic.at(report_k)});

    if (valid.loss < result.best_valid_loss) {
      result.best_valid_loss = valid.loss;
      result.best_epoch = epoch;
      result.best_values = m.params().values();
      patience_left = cfg.patience;
    } else {
      if (--patience_left < 0) break;
    }
  }

  if (result.best_values.empty()) {
    throw DataError("train: no epoch produced a finite validation loss");
  }
  m.params().set_values(result.best_values);
  return result;
}

}  // namespace dfl::objective
