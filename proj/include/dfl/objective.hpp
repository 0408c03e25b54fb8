#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dfl/autodiff.hpp"
#include "dfl/model.hpp"

namespace dfl::objective {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int window = 32;  // consecutive dates per loss evaluation
  int max_epochs = 50;
  int patience = 5;
  double lambda_d = 1.0;
  double lambda_b = 1.0;
  double lambda_c = 1.0;
  double epsilon = 1e-8;

  void validate() const {
    if (learning_rate <= 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1) {
      throw ConfigError("train config: bad optimizer rates");
    }
    if (window < 2) throw ConfigError("train config: window must be >= 2 (ICIR needs >= 2 ICs)");
    if (max_epochs < 1 || patience < 0) throw ConfigError("train config: bad epoch counts");
    if (lambda_d < 0 || lambda_b < 0 || lambda_c < 0 || epsilon <= 0) {
      throw ConfigError("train config: bad loss coefficients");
    }
  }
};

// ---------------------------------------------------------------------------
// Plain statistics (reporting, baselines, backtests)

inline double information_coefficient(const std::vector<double>& f, const std::vector<double>& r,
                                      double eps = 1e-8) {
  const std::size_t n = f.size();
  if (n != r.size() || n < 3) {
    throw DimensionError("information_coefficient: need two aligned vectors of length >= 3");
  }
  double fm = 0, rm = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fm += f[i];
    rm += r[i];
  }
  fm /= static_cast<double>(n);
  rm /= static_cast<double>(n);
  double cov = 0, fv = 0, rv = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (f[i] - fm) * (r[i] - rm);
    fv += (f[i] - fm) * (f[i] - fm);
    rv += (r[i] - rm) * (r[i] - rm);
  }
  cov /= static_cast<double>(n);
  const double fs = std::sqrt(fv / static_cast<double>(n));
  const double rs = std::sqrt(rv / static_cast<double>(n));
  return cov / ((fs + eps) * (rs + eps));
}

// mean / (sample std + eps)
inline double icir(const std::vector<double>& ics, double eps = 1e-8) {
  if (ics.size() < 2) throw DimensionError("icir: need at least two ICs");
  double mean = 0;
  for (double ic : ics) mean += ic;
  mean /= static_cast<double>(ics.size());
  double ss = 0;
  for (double ic : ics) ss += (ic - mean) * (ic - mean);
  const double sd = std::sqrt(ss / static_cast<double>(ics.size() - 1));
  return mean / (sd + eps);
}

inline double factor_return(const std::vector<double>& f, const std::vector<double>& r,
                            bool standardize = true, double eps = 1e-8) {
  const std::size_t n = f.size();
  if (n != r.size() || n < 2) {
    throw DimensionError("factor_return: need two aligned vectors of length >= 2");
  }
  std::vector<double> fz = f;
  if (standardize) {
    double mean = 0;
    for (double v : f) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (double v : f) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (auto& v : fz) v = (v - mean) / (sd + eps);
  }
  double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += fz[i] * r[i];
    den += fz[i] * fz[i];
  }
  return num / (den + eps);
}

inline double attention_deviation(const std::vector<double>& f, const std::vector<double>& fh) {
  if (f.size() != fh.size()) throw DimensionError("attention_deviation: length mismatch");
  double ss = 0;
  for (std::size_t i = 0; i < f.size(); ++i) ss += (f[i] - fh[i]) * (f[i] - fh[i]);
  return std::sqrt(ss);
}

// ---------------------------------------------------------------------------
// Differentiable versions (gradients flow into the deep factors)

inline ad::Var information_coefficient(ad::Tape& t, ad::Var f, const Tensor& r,
                                       double eps = 1e-8) {
  if (f.value().rows() < 3) throw DimensionError("information_coefficient: need n >= 3");
  ad::Var rv = t.constant(r);
  auto [fm, fs] = t.reduce_stats(f, 0);
  auto [rm, rs] = t.reduce_stats(rv, 0);
  ad::Var cov = t.reduce_mean(t.mul(t.sub(f, fm), t.sub(rv, rm)), 0);
  return t.div(cov, t.mul(fs + eps, rs + eps));
}

inline ad::Var icir(ad::Tape& t, ad::Var ics, double eps = 1e-8) {
  return t.div(t.reduce_mean(ics, 0), t.reduce_std(ics, 0, 1) + eps);
}

// Exact one-dimensional least squares through the origin on the z-scored
// factor; the closed form keeps the graph differentiable w.r.t. f.
inline ad::Var factor_return(ad::Tape& t, ad::Var f, const Tensor& r, bool standardize = true,
                             double eps = 1e-8) {
  ad::Var fz = f;
  if (standardize) {
    auto [fm, fs] = t.reduce_stats(f, 0);
    fz = t.div(t.sub(f, fm), fs + eps);
  }
  ad::Var num = t.sum_all(t.mul(fz, t.constant(r)));
  ad::Var den = t.sum_all(t.mul(fz, fz)) + eps;
  return t.div(num, den);
}

inline ad::Var attention_deviation(ad::Tape& t, ad::Var f, ad::Var f_hat) {
  if (!t.value(f).same_shape(t.value(f_hat))) {
    throw DimensionError("attention_deviation: length mismatch");
  }
  return t.l2_norm(t.sub(f, f_hat));
}

// ---------------------------------------------------------------------------
// Composite loss over a window of dates

struct WindowDate {
  std::string date;
  model::ForwardVars fwd;
  std::map<int, Tensor> returns;  // per horizon, n x 1, aligned with the forward pass
};

struct LossTerm {
  std::string date;
  int horizon = 0;
  double deviation = 0;  // d_k^t
  double fret = 0;       // b_k^t
};

struct LossBreakdown {
  double total = 0;
  std::map<int, double> icir_term;  // c_k
  std::vector<LossTerm> terms;
  std::vector<std::string> warnings;
};

struct TotalLoss {
  ad::Var loss;
  LossBreakdown breakdown;
};

// L = (1/(|K| |T|)) sum_k sum_t (lambda_d d_k^t - lambda_b b_k^t - lambda_c c_k).
// c_k is computed from the window's ICs, so its gradient couples every date.
// Dates missing a return vector for any horizon are excluded with a warning.
inline TotalLoss total_loss(ad::Tape& t, const std::vector<WindowDate>& window,
                            const TrainConfig& cfg) {
  cfg.validate();
  TotalLoss out;

  std::vector<const WindowDate*> usable;
  for (const auto& wd : window) {
    bool complete = true;
    for (const auto& [k, head] : wd.fwd.heads) {
      auto it = wd.returns.find(k);
      if (it == wd.returns.end() || it->second.size() != head.f.value().size()) {
        complete = false;
        break;
      }
    }
    if (complete) {
      usable.push_back(&wd);
    } else {
      out.breakdown.warnings.push_back("date " + wd.date +
                                       " excluded from loss: missing returns");
    }
  }
  if (usable.size() < 2) {
    throw DataError("total_loss: fewer than two usable dates in the window");
  }

  const auto& horizons = usable.front()->fwd.heads;
  const double count = static_cast<double>(horizons.size() * usable.size());

  ad::Var acc;
  auto add_term = [&](ad::Var term) { acc = acc.valid() ? t.add(acc, term) : term; };

  auto check_finite = [&](double v, const char* what, const std::string& date, int k) {
    if (!std::isfinite(v)) {
      throw DataError(strf("total_loss: non-finite %s term on %s (horizon %d)", what,
                           date.c_str(), k));
    }
  };

  for (std::size_t h = 0; h < horizons.size(); ++h) {
    const int k = horizons[h].first;
    std::vector<ad::Var> ics;
    ics.reserve(usable.size());
    for (const WindowDate* wd : usable) {
      const auto& head = wd->fwd.heads[h].second;
      const Tensor& r = wd->returns.at(k);

      ad::Var d = attention_deviation(t, head.f, head.f_hat);
      ad::Var b = factor_return(t, head.f, r, true, cfg.epsilon);
      ics.push_back(information_coefficient(t, head.f, r, cfg.epsilon));

      check_finite(d.value().item(), "deviation", wd->date, k);
      check_finite(b.value().item(), "factor-return", wd->date, k);
      check_finite(ics.back().value().item(), "ic", wd->date, k);
      out.breakdown.terms.push_back({wd->date, k, d.value().item(), b.value().item()});

      add_term(d * cfg.lambda_d);
      add_term(b * (-cfg.lambda_b));
    }
    ad::Var c = icir(t, t.concat(ics, 0), cfg.epsilon);
    check_finite(c.value().item(), "icir", usable.front()->date, k);
    out.breakdown.icir_term[k] = c.value().item();
    // the -c_k term appears once per date in the written-out double sum
    add_term(c * (-cfg.lambda_c * static_cast<double>(usable.size())));
  }

  out.loss = acc / count;
  check_finite(out.loss.value().item(), "total", usable.front()->date, 0);
  out.breakdown.total = out.loss.value().item();
  return out;
}

}  // namespace dfl::objective
