#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfl/model.hpp"

namespace dfl::model {

// Versioned JSON checkpoint: config + named parameter tensors as flat arrays.
inline void save_checkpoint(const std::string& path, const DeepFactorModel& model,
                            const std::vector<std::string>& factor_names) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["kind"] = kind_name(model.kind());
  j["num_factors"] = model.num_factors();
  j["factor_names"] = factor_names;
  const ModelConfig& cfg = model.config();
  j["config"] = {{"hidden_width", cfg.hidden_width}, {"gat_heads", cfg.gat_heads},
                 {"attn_slope", cfg.attn_slope},     {"act_slope", cfg.act_slope},
                 {"horizons", cfg.horizons},         {"seed", cfg.seed}};
  auto params = nlohmann::ordered_json::array();
  for (const auto& p : model.params().items()) {
    params.push_back({{"name", p.name},
                      {"shape", p.tensor.shape()},
                      {"values", p.tensor.data()},
                      {"trainable", p.trainable}});
  }
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out << j.dump(1) << "\n";
}

struct Checkpoint {
  DeepFactorModel model;
  std::vector<std::string> factor_names;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint '" + path + "': " + e.what());
  }
  if (j.value("version", 0) != 1) {
    throw ParseError("checkpoint '" + path + "': unsupported version");
  }
  ModelConfig cfg;
  const auto& jc = j.at("config");
  cfg.hidden_width = jc.at("hidden_width").get<int>();
  cfg.gat_heads = jc.at("gat_heads").get<int>();
  cfg.attn_slope = jc.at("attn_slope").get<double>();
  cfg.act_slope = jc.at("act_slope").get<double>();
  cfg.horizons = jc.at("horizons").get<std::vector<int>>();
  cfg.seed = jc.at("seed").get<std::uint64_t>();

  Checkpoint out{DeepFactorModel(parse_kind(j.at("kind").get<std::string>()), cfg,
                                 j.at("num_factors").get<std::size_t>()),
                 j.at("factor_names").get<std::vector<std::string>>()};

  for (const auto& jp : j.at("params")) {
    const std::string name = jp.at("name").get<std::string>();
    if (!out.model.params().contains(name)) {
      throw ParseError("checkpoint '" + path + "': unexpected parameter '" + name + "'");
    }
    ad::Parameter& p = out.model.params().at(name);
    const auto shape = jp.at("shape").get<std::vector<std::size_t>>();
    if (shape != p.tensor.shape()) {
      throw ParseError("checkpoint '" + path + "': shape mismatch for '" + name + "'");
    }
    p.tensor = Tensor(shape, jp.at("values").get<std::vector<double>>());
    p.trainable = jp.value("trainable", true);
  }
  return out;
}

}  // namespace dfl::model
