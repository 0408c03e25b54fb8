#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dfl/autodiff.hpp"
#include "dfl/stock_graph.hpp"

namespace dfl::model {

enum class ModelKind { Dmfm, Mlp, Mgat };

inline std::string kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Dmfm:
      return "dmfm";
    case ModelKind::Mlp:
      return "mlp";
    case ModelKind::Mgat:
      return "mgat";
  }
  return "?";
}

inline ModelKind parse_kind(const std::string& name) {
  if (name == "dmfm") return ModelKind::Dmfm;
  if (name == "mlp") return ModelKind::Mlp;
  if (name == "mgat") return ModelKind::Mgat;
  throw ConfigError("unknown model kind '" + name + "'");
}

struct ModelConfig {
  int hidden_width = 32;  // m1
  int gat_heads = 1;
  double attn_slope = 0.2;  // attention score activation
  double act_slope = 0.01;  // every other activation
  std::vector<int> horizons = {3, 5, 10, 15, 20};
  std::uint64_t seed = 42;

  void validate() const {
    if (hidden_width < 1) throw ConfigError("hidden_width must be >= 1");
    if (gat_heads < 1 || hidden_width % gat_heads != 0) {
      throw ConfigError("gat_heads must divide hidden_width");
    }
    if (!(attn_slope > 0 && attn_slope < 1) || !(act_slope > 0 && act_slope < 1)) {
      throw ConfigError("activation slopes must lie in (0,1)");
    }
    if (horizons.empty()) throw ConfigError("horizon set must not be empty");
    for (std::size_t i = 0; i < horizons.size(); ++i) {
      if (horizons[i] < 1 || (i > 0 && horizons[i] <= horizons[i - 1])) {
        throw ConfigError("horizons must be positive and sorted ascending");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Building blocks (free functions so tests can drive them directly)

struct EncoderParams {
  ad::Var bn_scale, bn_shift;  // 1 x m
  ad::Var w1, b1;              // m x m1, 1 x m1
  ad::Var w2, b2;              // m1 x m1, 1 x m1
  double slope = 0.01;
};

struct GatParams {
  std::vector<ad::Var> w;      // per head: d x dh
  std::vector<ad::Var> a_src;  // per head: dh x 1
  std::vector<ad::Var> a_dst;  // per head: dh x 1
  ad::Var bias;                // 1 x d_out
  double score_slope = 0.2;
};

struct AttentionParams {
  ad::Var w;     // m x m
  ad::Var bias;  // 1 x m
  double slope = 0.01;
};

struct AttentionOutputs {
  ad::Var attn;   // n x m, rows sum to 1
  ad::Var a_bar;  // 1 x m, sums to 1
  ad::Var f_hat;  // n x 1
};

// Cross-sectional z-score per factor column (population std, guarded).
inline ad::Var zscore_columns(ad::Tape& t, ad::Var x) {
  auto [mu, sigma] = t.reduce_stats(x, 0);
  return t.div(t.sub(x, mu), sigma + 1e-8);
}

inline ad::Var encode_context(ad::Tape& t, ad::Var factors, const EncoderParams& p) {
  ad::Var z = t.add(t.mul(zscore_columns(t, factors), p.bn_scale), p.bn_shift);
  ad::Var h = t.leaky_relu(t.add(t.matmul(z, p.w1), p.b1), p.slope);
  return t.add(t.matmul(h, p.w2), p.b2);
}

// Masked graph attention: e_ij = lrelu(a_src.Wh_i + a_dst.Wh_j) for mask_ij=1,
// alpha_i = masked softmax over j, out_i = sum_j alpha_ij Wh_j (+ bias).
// Heads concatenate along the feature axis.
inline ad::Var gat_influence(ad::Tape& t, ad::Var h, const Tensor& mask, const GatParams& p) {
  std::vector<ad::Var> head_out;
  head_out.reserve(p.w.size());
  for (std::size_t head = 0; head < p.w.size(); ++head) {
    ad::Var hw = t.matmul(h, p.w[head]);
    ad::Var scores = t.pairwise_sum(t.matmul(hw, p.a_src[head]), t.matmul(hw, p.a_dst[head]));
    ad::Var alpha = t.masked_softmax(t.leaky_relu(scores, p.score_slope), mask, 1);
    head_out.push_back(t.matmul(alpha, hw));
  }
  ad::Var out = head_out.size() == 1 ? head_out[0] : t.concat(head_out, 1);
  return t.add(out, p.bias);
}

inline ad::Var industry_neutralize(ad::Tape& t, ad::Var context, ad::Var influence) {
  if (!t.value(context).same_shape(t.value(influence))) {
    throw DimensionError("neutralize: context " + shape_string(t.value(context)) +
                         " vs influence " + shape_string(t.value(influence)));
  }
  return t.sub(context, influence);
}

inline ad::Var universe_neutralize(ad::Tape& t, ad::Var industry_neutral, ad::Var influence) {
  return industry_neutralize(t, industry_neutral, influence);
}

inline ad::Var deep_factor_head(ad::Tape& t, ad::Var contexts, ad::Var w, ad::Var b,
                                double slope) {
  return t.leaky_relu(t.add(t.matmul(contexts, w), b), slope);
}

// Softmax over the factor axis; a_bar averages the per-stock rows and f_hat
// reconstructs the deep factor as a convex blend of the raw columns.
inline AttentionOutputs factor_attention(ad::Tape& t, ad::Var factors, const AttentionParams& p) {
  ad::Var u = t.leaky_relu(t.add(t.matmul(factors, p.w), p.bias), p.slope);
  AttentionOutputs out;
  out.attn = t.softmax(u, 1);
  out.a_bar = t.reduce_mean(out.attn, 0);
  out.f_hat = t.matmul(factors, t.transpose(out.a_bar));
  return out;
}

// ---------------------------------------------------------------------------
// Whole model

struct HeadVars {
  ad::Var f;      // n x 1
  ad::Var f_hat;  // n x 1
  ad::Var a_bar;  // 1 x m
  ad::Var attn;   // n x m
};

struct ForwardVars {
  ad::Var context;
  ad::Var industry_neutral;  // dmfm only
  ad::Var universe_neutral;  // dmfm only
  std::vector<std::pair<int, HeadVars>> heads;
};

struct DeepFactorSet {
  std::string date;
  std::vector<int> horizons;
  std::map<int, std::vector<double>> f;
  std::map<int, std::vector<double>> f_hat;
  std::map<int, std::vector<double>> a_bar;
};

class DeepFactorModel {
 public:
  DeepFactorModel(ModelKind kind, ModelConfig cfg, std::size_t num_factors)
      : kind_(kind), cfg_(std::move(cfg)), m_(num_factors) {
    cfg_.validate();
    if (m_ < 1) throw ConfigError("model needs at least one factor");
    init_params();
  }

  ModelKind kind() const { return kind_; }
  const ModelConfig& config() const { return cfg_; }
  std::size_t num_factors() const { return m_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  std::size_t head_input_width() const {
    const std::size_t h = static_cast<std::size_t>(cfg_.hidden_width);
    switch (kind_) {
      case ModelKind::Dmfm:
        return 3 * h;
      case ModelKind::Mlp:
        return h;
      case ModelKind::Mgat:
        return 2 * h;
    }
    return h;
  }

  ForwardVars forward(ad::Tape& t, const Tensor& factors,
                      const graph::GraphSnapshot& graph) const {
    if (factors.rank() != 2 || factors.cols() != m_) {
      throw DimensionError("forward: factor matrix must be n x " + strf("%zu", m_));
    }
    if (kind_ != ModelKind::Mlp && graph.industry_mask.rows() != factors.rows()) {
      throw DimensionError("forward: graph snapshot does not match the factor matrix");
    }

    ad::Var F = t.constant(factors);
    ForwardVars out;
    out.context = encode_context(t, F, encoder_vars(t));

    ad::Var head_input = out.context;
    if (kind_ == ModelKind::Dmfm) {
      ad::Var industry_influence =
          gat_influence(t, out.context, graph.industry_mask, gat_vars(t, "gat_ind"));
      out.industry_neutral = industry_neutralize(t, out.context, industry_influence);
      ad::Var universe_influence =
          gat_influence(t, out.industry_neutral, graph.universe_mask, gat_vars(t, "gat_uni"));
      out.universe_neutral = universe_neutralize(t, out.industry_neutral, universe_influence);
      head_input = t.concat({out.context, out.industry_neutral, out.universe_neutral}, 1);
    } else if (kind_ == ModelKind::Mgat) {
      ad::Var universe_influence =
          gat_influence(t, out.context, graph.universe_mask, gat_vars(t, "gat_uni"));
      head_input = t.concat({out.context, universe_influence}, 1);
    }

    for (int k : cfg_.horizons) {
      HeadVars head;
      head.f = deep_factor_head(t, head_input, t.param(params_.at(head_name(k, "w"))),
                                t.param(params_.at(head_name(k, "b"))), cfg_.act_slope);
      AttentionParams ap{t.param(params_.at(attn_name(k, "w"))),
                         t.param(params_.at(attn_name(k, "b"))), cfg_.act_slope};
      AttentionOutputs attention = factor_attention(t, F, ap);
      head.attn = attention.attn;
      head.a_bar = attention.a_bar;
      head.f_hat = attention.f_hat;
      out.heads.emplace_back(k, head);
    }
    return out;
  }

  DeepFactorSet evaluate(const Tensor& factors, const graph::GraphSnapshot& graph) const {
    ad::Tape t;
    ForwardVars vars = forward(t, factors, graph);
    DeepFactorSet out;
    out.date = graph.date;
    out.horizons = cfg_.horizons;
    for (const auto& [k, head] : vars.heads) {
      out.f[k] = head.f.value().data();
      out.f_hat[k] = head.f_hat.value().data();
      out.a_bar[k] = head.a_bar.value().data();
    }
    return out;
  }

  // Per-stock score for one horizon, aligned with the snapshot's id order.
  std::vector<double> scores(const Tensor& factors, const graph::GraphSnapshot& graph,
                             int k) const {
    ad::Tape t;
    ForwardVars vars = forward(t, factors, graph);
    for (const auto& [horizon, head] : vars.heads) {
      if (horizon == k) return head.f.value().data();
    }
    throw ConfigError(strf("horizon %d not in model config", k));
  }

 private:
  static std::string head_name(int k, const char* leaf) {
    return strf("head.k%d.%s", k, leaf);
  }
  static std::string attn_name(int k, const char* leaf) {
    return strf("attn.k%d.%s", k, leaf);
  }

  EncoderParams encoder_vars(ad::Tape& t) const {
    return {t.param(params_.at("enc.bn_scale")), t.param(params_.at("enc.bn_shift")),
            t.param(params_.at("enc.w1")),       t.param(params_.at("enc.b1")),
            t.param(params_.at("enc.w2")),       t.param(params_.at("enc.b2")),
            cfg_.act_slope};
  }

  GatParams gat_vars(ad::Tape& t, const std::string& prefix) const {
    GatParams p;
    p.score_slope = cfg_.attn_slope;
    for (int head = 0; head < cfg_.gat_heads; ++head) {
      p.w.push_back(t.param(params_.at(strf("%s.h%d.w", prefix.c_str(), head))));
      p.a_src.push_back(t.param(params_.at(strf("%s.h%d.a_src", prefix.c_str(), head))));
      p.a_dst.push_back(t.param(params_.at(strf("%s.h%d.a_dst", prefix.c_str(), head))));
    }
    p.bias = t.param(params_.at(prefix + ".bias"));
    return p;
  }

  void init_params() {
    std::mt19937_64 rng(cfg_.seed);
    auto uniform_fan_in = [&rng](std::vector<std::size_t> shape, std::size_t fan_in) {
      Tensor t(std::move(shape));
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.data()) v = scale * dist(rng);
      return t;
    };

    const std::size_t h = static_cast<std::size_t>(cfg_.hidden_width);
    params_.add("enc.bn_scale", Tensor::ones({1, m_}));
    params_.add("enc.bn_shift", Tensor::zeros({1, m_}));
    params_.add("enc.w1", uniform_fan_in({m_, h}, m_));
    params_.add("enc.b1", Tensor::zeros({1, h}));
    params_.add("enc.w2", uniform_fan_in({h, h}, h));
    params_.add("enc.b2", Tensor::zeros({1, h}));

    auto add_gat = [&](const std::string& prefix) {
      const std::size_t dh = h / static_cast<std::size_t>(cfg_.gat_heads);
      for (int head = 0; head < cfg_.gat_heads; ++head) {
        params_.add(strf("%s.h%d.w", prefix.c_str(), head), uniform_fan_in({h, dh}, h));
        params_.add(strf("%s.h%d.a_src", prefix.c_str(), head), uniform_fan_in({dh, 1}, dh));
        params_.add(strf("%s.h%d.a_dst", prefix.c_str(), head), uniform_fan_in({dh, 1}, dh));
      }
      params_.add(prefix + ".bias", Tensor::zeros({1, h}));
    };
    if (kind_ == ModelKind::Dmfm) {
      add_gat("gat_ind");
      add_gat("gat_uni");
    } else if (kind_ == ModelKind::Mgat) {
      add_gat("gat_uni");
    }

    const std::size_t head_width = head_input_width();
    for (int k : cfg_.horizons) {
      params_.add(head_name(k, "w"), uniform_fan_in({head_width, 1}, head_width));
      params_.add(head_name(k, "b"), Tensor::zeros({1}));
      params_.add(attn_name(k, "w"), uniform_fan_in({m_, m_}, m_));
      params_.add(attn_name(k, "b"), Tensor::zeros({1, m_}));
    }
  }

  ModelKind kind_;
  ModelConfig cfg_;
  std::size_t m_;
  ad::ParameterSet params_;
};

}  // namespace dfl::model
