#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dfl/dataset.hpp"
#include "dfl/objective.hpp"

namespace dfl::baselines {

// Population z-score per column with the usual epsilon guard.
inline Tensor zscore_columns(const Tensor& f, double eps = 1e-8) {
  const std::size_t n = f.rows(), m = f.cols();
  Tensor out({n, m});
  for (std::size_t j = 0; j < m; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += f.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (f.at(i, j) - mean) * (f.at(i, j) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) out.at(i, j) = (f.at(i, j) - mean) / (sd + eps);
  }
  return out;
}

namespace detail {

// Gaussian elimination with partial pivoting; false on a singular pivot.
inline bool solve_inplace(std::vector<std::vector<double>>& a, std::vector<double>& b) {
  const std::size_t n = a.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    }
    if (std::fabs(a[pivot][col]) < 1e-12) return false;
    std::swap(a[pivot], a[col]);
    std::swap(b[pivot], b[col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= factor * a[col][c];
      b[r] -= factor * b[col];
    }
  }
  for (std::size_t col = n; col-- > 0;) {
    for (std::size_t c = col + 1; c < n; ++c) b[col] -= a[col][c] * b[c];
    b[col] /= a[col][col];
  }
  return true;
}

}  // namespace detail

struct LinearBaseline {
  std::vector<double> weights;  // over z-scored factor columns
};

// Pooled cross-sectional OLS of k-day forward returns on z-scored factors over
// the training dates. Falls back to ridge (lambda = 1e-6) on a singular design.
inline LinearBaseline fit_linear(const data::Dataset& ds,
                                 const std::vector<std::size_t>& train_dates, int k,
                                 double ridge = 1e-6) {
  const std::size_t m = ds.num_factors();
  std::vector<std::vector<double>> xtx(m, std::vector<double>(m, 0.0));
  std::vector<double> xty(m, 0.0);
  for (std::size_t t : train_dates) {
    const Tensor z = zscore_columns(ds.panel.values[t]);
    const auto& r = ds.returns.values.at(k)[t];
    const auto& ok = ds.returns.valid.at(k)[t];
    for (std::size_t i = 0; i < z.rows(); ++i) {
      if (!ok[i]) continue;
      for (std::size_t a = 0; a < m; ++a) {
        xty[a] += z.at(i, a) * r[i];
        for (std::size_t b = a; b < m; ++b) xtx[a][b] += z.at(i, a) * z.at(i, b);
      }
    }
  }
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < a; ++b) xtx[a][b] = xtx[b][a];
  }

  auto lhs = xtx;
  auto rhs = xty;
  if (!detail::solve_inplace(lhs, rhs)) {
    lhs = xtx;
    rhs = xty;
    for (std::size_t a = 0; a < m; ++a) lhs[a][a] += ridge;
    if (!detail::solve_inplace(lhs, rhs)) {
      throw DataError("fit_linear: design singular even with ridge");
    }
  }
  return {rhs};
}

inline std::vector<double> linear_scores(const LinearBaseline& model, const Tensor& factors) {
  const Tensor z = zscore_columns(factors);
  std::vector<double> out(z.rows(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) out[i] += z.at(i, j) * model.weights[j];
  }
  return out;
}

struct EwBaseline {
  std::vector<double> signs;  // +-1 per factor, from training-period IC sign
};

inline EwBaseline fit_ew(const data::Dataset& ds, const std::vector<std::size_t>& train_dates,
                         int k) {
  const std::size_t m = ds.num_factors();
  std::vector<double> mean_ic(m, 0.0);
  std::size_t used = 0;
  for (std::size_t t : train_dates) {
    const Tensor z = zscore_columns(ds.panel.values[t]);
    const auto& r = ds.returns.values.at(k)[t];
    const auto& ok = ds.returns.valid.at(k)[t];
    std::vector<double> rr;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < z.rows(); ++i) {
      if (ok[i]) {
        rr.push_back(r[i]);
        rows.push_back(i);
      }
    }
    if (rr.size() < 3) continue;
    ++used;
    for (std::size_t j = 0; j < m; ++j) {
      std::vector<double> col;
      col.reserve(rows.size());
      for (std::size_t i : rows) col.push_back(z.at(i, j));
      mean_ic[j] += objective::information_coefficient(col, rr);
    }
  }
  if (used == 0) throw DataError("fit_ew: no usable training dates");
  EwBaseline out;
  out.signs.resize(m);
  for (std::size_t j = 0; j < m; ++j) out.signs[j] = mean_ic[j] >= 0.0 ? 1.0 : -1.0;
  return out;
}

inline std::vector<double> ew_scores(const EwBaseline& model, const Tensor& factors) {
  const Tensor z = zscore_columns(factors);
  std::vector<double> out(z.rows(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) out[i] += model.signs[j] * z.at(i, j);
    out[i] /= static_cast<double>(z.cols());
  }
  return out;
}

}  // namespace dfl::baselines
