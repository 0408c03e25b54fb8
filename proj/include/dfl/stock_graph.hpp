#pragma once

#include <map>
#include <string>
#include <vector>

#include "dfl/market_data.hpp"
#include "dfl/tensor.hpp"

namespace dfl::graph {

// Per-date masks for the two relation levels. The industry mask is symmetric
// with a self-loop diagonal; the universe mask is all ones.
struct GraphSnapshot {
  std::string date;
  std::vector<std::string> ids;
  Tensor industry_mask;  // n x n in {0,1}
  Tensor universe_mask;  // n x n all ones
};

inline Tensor build_universe_mask(std::size_t n) {
  return Tensor::ones({n, n});
}

inline GraphSnapshot build_industry_mask(const data::UniverseSnapshot& universe) {
  const std::size_t n = universe.size();
  if (universe.industries.size() != n) {
    throw GraphError("universe snapshot on " + universe.date + " is missing industry labels");
  }
  GraphSnapshot snap;
  snap.date = universe.date;
  snap.ids = universe.ids;
  snap.industry_mask = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      snap.industry_mask.at(i, j) = universe.industries[i] == universe.industries[j] ? 1.0 : 0.0;
    }
  }
  snap.universe_mask = build_universe_mask(n);
  return snap;
}

// Average same-industry edges per stock, self-loops excluded.
inline std::vector<std::pair<std::string, double>> edge_stats(
    const std::vector<GraphSnapshot>& snapshots) {
  if (snapshots.empty()) throw GraphError("edge_stats: no snapshots");
  std::vector<std::pair<std::string, double>> out;
  out.reserve(snapshots.size());
  for (const auto& snap : snapshots) {
    const std::size_t n = snap.ids.size();
    double edges = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) edges += snap.industry_mask.at(i, j);
      }
    }
    out.emplace_back(snap.date, n > 0 ? edges / static_cast<double>(n) : 0.0);
  }
  return out;
}

// Per-date industry shares; shares sum to 1 for every date with members.
inline std::vector<std::pair<std::string, std::map<int, double>>> industry_proportions(
    const std::vector<data::UniverseSnapshot>& universes) {
  std::vector<std::pair<std::string, std::map<int, double>>> out;
  out.reserve(universes.size());
  for (const auto& snap : universes) {
    std::map<int, double> shares;
    for (int industry : snap.industries) shares[industry] += 1.0;
    for (auto& [industry, count] : shares) count /= static_cast<double>(snap.size());
    out.emplace_back(snap.date, std::move(shares));
  }
  return out;
}

}  // namespace dfl::graph
