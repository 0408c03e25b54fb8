#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dfl/tensor.hpp"

namespace dfl::ad {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Named parameter collection with stable insertion order (checkpoints and
// gradient maps rely on it).
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor t, bool trainable = true) {
    if (index_.count(name) != 0) {
      throw ConfigError("duplicate parameter '" + name + "'");
    }
    index_[name] = items_.size();
    items_.push_back(Parameter{name, std::move(t), trainable});
    return items_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return items_[it->second];
  }

  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return items_[it->second];
  }

  std::deque<Parameter>& items() { return items_; }
  const std::deque<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::size_t count_values() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.size();
    return n;
  }

  std::unordered_map<std::string, Tensor> values() const {
    std::unordered_map<std::string, Tensor> out;
    for (const auto& p : items_) out.emplace(p.name, p.tensor);
    return out;
  }

  void set_values(const std::unordered_map<std::string, Tensor>& values) {
    for (auto& p : items_) {
      auto it = values.find(p.name);
      if (it != values.end()) p.tensor = it->second;
    }
  }

 private:
  std::deque<Parameter> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

using GradMap = std::unordered_map<std::string, Tensor>;

namespace detail {

enum class Bcast { Same, Scalar, Row, Col };

inline Bcast bcast_kind(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (b.size() == 1) return Bcast::Scalar;
  if (a.rank() == 2 && b.rank() == 2) {
    if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
    if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  }
  throw DimensionError("cannot broadcast " + shape_string(b) + " onto " + shape_string(a));
}

inline double bval(const Tensor& b, Bcast kind, std::size_t flat, std::size_t cols) {
  switch (kind) {
    case Bcast::Same:
      return b[flat];
    case Bcast::Scalar:
      return b[0];
    case Bcast::Row:
      return b[flat % cols];
    case Bcast::Col:
      return b[flat / cols];
  }
  return 0.0;
}

// Sums `g` (shaped like the broadcast target) back down to `b`'s shape.
inline Tensor reduce_to(const Tensor& g, const Tensor& b, Bcast kind) {
  if (kind == Bcast::Same) {
    if (g.shape() == b.shape()) return g;
    Tensor out(b.shape());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i];
    return out;
  }
  Tensor out = Tensor::zeros(b.shape());
  const std::size_t cols = g.rank() == 2 ? g.cols() : 1;
  for (std::size_t i = 0; i < g.size(); ++i) {
    switch (kind) {
      case Bcast::Scalar:
        out[0] += g[i];
        break;
      case Bcast::Row:
        out[i % cols] += g[i];
        break;
      case Bcast::Col:
        out[i / cols] += g[i];
        break;
      default:
        break;
    }
  }
  return out;
}

// Iterates the 1-d "lines" a reduction/softmax runs along.
struct LineSpec {
  std::size_t count = 0;   // number of lines
  std::size_t len = 0;     // elements per line
  std::size_t stride = 0;  // step between elements of a line
  std::size_t base = 0;    // step between line starts
};

inline LineSpec line_spec(const Tensor& t, int axis) {
  if (t.rank() == 1) {
    if (axis != 0) throw DimensionError("axis out of range for rank-1 tensor");
    return {1, t.shape()[0], 1, 0};
  }
  if (t.rank() == 2) {
    if (axis == 0) return {t.cols(), t.rows(), t.cols(), 1};
    if (axis == 1) return {t.rows(), t.cols(), 1, t.cols()};
    throw DimensionError("axis out of range for rank-2 tensor");
  }
  throw DimensionError("rank-1 or rank-2 tensor required");
}

inline std::vector<std::size_t> reduced_shape(const Tensor& t, int axis) {
  if (t.rank() == 1) return {1};
  if (axis == 0) return {1, t.cols()};
  return {t.rows(), 1};
}

}  // namespace detail

class Tape;

// Lightweight handle to a tape node.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  Tensor grad() const;
  Tape* tape() const { return tape_; }
  int index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int idx) : tape_(t), index_(idx) {}
  Tape* tape_ = nullptr;
  int index_ = -1;
};

// Define-by-run reverse-mode tape over dense tensors. A tape lives on one
// thread and is rebuilt for every forward pass.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, const Node&)> backprop;
  };

  Var constant(Tensor value) { return make(new_node(std::move(value), {})); }

  Var leaf(Tensor value) { return make(new_node(std::move(value), {})); }

  Var param(const Parameter& p) {
    const int idx = new_node(p.tensor, {});
    param_nodes_.emplace_back(idx, &p);
    return make(idx);
  }

  // ---- elementwise arithmetic (limited broadcasting of the second operand) --

  Var add(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const auto kind = detail::bcast_kind(av, bv);
    Tensor out = av;
    const std::size_t cols = av.rank() == 2 ? av.cols() : 1;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += detail::bval(bv, kind, i, cols);
    const int idx = new_node(std::move(out), {a.index_, b.index_});
    node(idx).backprop = [ai = a.index_, bi = b.index_, kind](Tape& t, const Node& self) {
      t.accum(ai, self.grad);
      t.accum(bi, detail::reduce_to(self.grad, t.node(bi).value, kind));
    };
    return make(idx);
  }

  Var sub(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const auto kind = detail::bcast_kind(av, bv);
    Tensor out = av;
    const std::size_t cols = av.rank() == 2 ? av.cols() : 1;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= detail::bval(bv, kind, i, cols);
    const int idx = new_node(std::move(out), {a.index_, b.index_});
    node(idx).backprop = [ai = a.index_, bi = b.index_, kind](Tape& t, const Node& self) {
      t.accum(ai, self.grad);
      Tensor neg = self.grad;
      for (auto& v : neg.data()) v = -v;
      t.accum(bi, detail::reduce_to(neg, t.node(bi).value, kind));
    };
    return make(idx);
  }

  Var mul(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const auto kind = detail::bcast_kind(av, bv);
    Tensor out = av;
    const std::size_t cols = av.rank() == 2 ? av.cols() : 1;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= detail::bval(bv, kind, i, cols);
    const int idx = new_node(std::move(out), {a.index_, b.index_});
    node(idx).backprop = [ai = a.index_, bi = b.index_, kind](Tape& t, const Node& self) {
      const Tensor& av2 = t.node(ai).value;
      const Tensor& bv2 = t.node(bi).value;
      const std::size_t c = av2.rank() == 2 ? av2.cols() : 1;
      Tensor ga = self.grad;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= detail::bval(bv2, kind, i, c);
      t.accum(ai, ga);
      Tensor gb_full = self.grad;
      for (std::size_t i = 0; i < gb_full.size(); ++i) gb_full[i] *= av2[i];
      t.accum(bi, detail::reduce_to(gb_full, bv2, kind));
    };
    return make(idx);
  }

  Var div(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const auto kind = detail::bcast_kind(av, bv);
    Tensor out = av;
    const std::size_t cols = av.rank() == 2 ? av.cols() : 1;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= detail::bval(bv, kind, i, cols);
    const int idx = new_node(std::move(out), {a.index_, b.index_});
    node(idx).backprop = [ai = a.index_, bi = b.index_, kind](Tape& t, const Node& self) {
      const Tensor& bv2 = t.node(bi).value;
      const Tensor& ov = self.value;
      const std::size_t c = ov.rank() == 2 ? ov.cols() : 1;
      Tensor ga = self.grad;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] /= detail::bval(bv2, kind, i, c);
      t.accum(ai, ga);
      Tensor gb_full = self.grad;
      for (std::size_t i = 0; i < gb_full.size(); ++i) {
        const double bvv = detail::bval(bv2, kind, i, c);
        gb_full[i] *= -ov[i] / bvv;
      }
      t.accum(bi, detail::reduce_to(gb_full, bv2, kind));
    };
    return make(idx);
  }

  Var neg(Var a) {
    Tensor out = value(a);
    for (auto& v : out.data()) v = -v;
    const int idx = new_node(std::move(out), {a.index_});
    node(idx).backprop = [ai = a.index_](Tape& t, const Node& self) {
      Tensor g = self.grad;
      for (auto& v : g.data()) v = -v;
      t.accum(ai, g);
    };
    return make(idx);
  }

  // ---- linear algebra ------------------------------------------------------

  Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    Tensor out = t_matmul(value(a), value(b));
    const int idx = new_node(std::move(out), {a.index_, b.index_});
    node(idx).backprop = [ai = a.index_, bi = b.index_](Tape& t, const Node& self) {
      const Tensor& av = t.node(ai).value;
      const Tensor& bv = t.node(bi).value;
      t.accum(ai, t_matmul(self.grad, t_transpose(bv)));
      t.accum(bi, t_matmul(t_transpose(av), self.grad));
    };
    return make(idx);
  }

  Var transpose(Var a) {
    Tensor out = t_transpose(value(a));
    const int idx = new_node(std::move(out), {a.index_});
    node(idx).backprop = [ai = a.index_](Tape& t, const Node& self) {
      t.accum(ai, t_transpose(self.grad));
    };
    return make(idx);
  }

  // S[i][j] = u[i] + v[j]; u and v are column vectors (or rank-1).
  Var pairwise_sum(Var u, Var v) {
    check_same_tape(u, v);
    const Tensor& uv = value(u);
    const Tensor& vv = value(v);
    if ((uv.rank() == 2 && uv.cols() != 1) || (vv.rank() == 2 && vv.cols() != 1)) {
      throw DimensionError("pairwise_sum: column vectors required");
    }
    const std::size_t n = uv.rows(), m = vv.rows();
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        out.at(i, j) = uv[i] + vv[j];
      }
    }
    const int idx = new_node(std::move(out), {u.index_, v.index_});
    node(idx).backprop = [ui = u.index_, vi = v.index_, n, m](Tape& t, const Node& self) {
      Tensor du(t.node(ui).value.shape());
      Tensor dv(t.node(vi).value.shape());
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const double g = self.grad[i * m + j];
          du[i] += g;
          dv[j] += g;
        }
      }
      t.accum(ui, du);
      t.accum(vi, dv);
    };
    return make(idx);
  }

  // ---- nonlinearities ------------------------------------------------------

  Var leaky_relu(Var a, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) {
      throw ConfigError(strf("leaky_relu: slope %g outside (0,1)", slope));
    }
    Tensor out = value(a);
    for (auto& v : out.data()) v = v >= 0.0 ? v : slope * v;
    const int idx = new_node(std::move(out), {a.index_});
    node(idx).backprop = [ai = a.index_, slope](Tape& t, const Node& self) {
      const Tensor& xv = t.node(ai).value;
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= xv[i] >= 0.0 ? 1.0 : slope;
      t.accum(ai, g);
    };
    return make(idx);
  }

  Var softmax(Var a, int axis) {
    const Tensor& xv = value(a);
    const auto spec = detail::line_spec(xv, axis);
    Tensor out(xv.shape());
    for (std::size_t line = 0; line < spec.count; ++line) {
      const std::size_t start = line * spec.base;
      double mx = -1e308;
      for (std::size_t k = 0; k < spec.len; ++k) mx = std::max(mx, xv[start + k * spec.stride]);
      double denom = 0.0;
      for (std::size_t k = 0; k < spec.len; ++k) {
        const std::size_t p = start + k * spec.stride;
        out[p] = std::exp(xv[p] - mx);
        denom += out[p];
      }
      for (std::size_t k = 0; k < spec.len; ++k) out[start + k * spec.stride] /= denom;
    }
    const int idx = new_node(std::move(out), {a.index_});
    node(idx).backprop = [ai = a.index_, spec](Tape& t, const Node& self) {
      Tensor g(self.value.shape());
      for (std::size_t line = 0; line < spec.count; ++line) {
        const std::size_t start = line * spec.base;
        double dot = 0.0;
        for (std::size_t k = 0; k < spec.len; ++k) {
          const std::size_t p = start + k * spec.stride;
          dot += self.grad[p] * self.value[p];
        }
        for (std::size_t k = 0; k < spec.len; ++k) {
          const std::size_t p = start + k * spec.stride;
          g[p] = self.value[p] * (self.grad[p] - dot);
        }
      }
      t.accum(ai, g);
    };
    return make(idx);
  }

  // Softmax restricted to positions with mask == 1; masked positions get
  // weight exactly 0 and contribute nothing to the normalization.
  Var masked_softmax(Var a, const Tensor& mask, int axis) {
    const Tensor& xv = value(a);
    if (!xv.same_shape(mask)) {
      throw DimensionError("masked_softmax: mask shape " + shape_string(mask) +
                           " does not match scores " + shape_string(xv));
    }
    for (double m : mask.data()) {
      if (m != 0.0 && m != 1.0) {
        throw DataError("masked_softmax: mask entries must be 0 or 1");
      }
    }
    const auto spec = detail::line_spec(xv, axis);
    Tensor out(xv.shape());
    for (std::size_t line = 0; line < spec.count; ++line) {
      const std::size_t start = line * spec.base;
      double mx = -1e308;
      bool any = false;
      for (std::size_t k = 0; k < spec.len; ++k) {
        const std::size_t p = start + k * spec.stride;
        if (mask[p] == 1.0) {
          any = true;
          mx = std::max(mx, xv[p]);
        }
      }
      if (!any) {
        throw DataError(strf("masked_softmax: fully masked row %zu", line));
      }
      double denom = 0.0;
      for (std::size_t k = 0; k < spec.len; ++k) {
        const std::size_t p = start + k * spec.stride;
        if (mask[p] == 1.0) {
          out[p] = std::exp(xv[p] - mx);
          denom += out[p];
        }
      }
      for (std::size_t k = 0; k < spec.len; ++k) {
        const std::size_t p = start + k * spec.stride;
        if (mask[p] == 1.0) out[p] /= denom;
      }
    }
    const int idx = new_node(std::move(out), {a.index_});
    node(idx).backprop = [ai = a.index_, spec](Tape& t, const Node& self) {
      Tensor g(self.value.shape());
      for (std::size_t line = 0; line < spec.count; ++line) {
        const std::size_t start = line * spec.base;
        double dot = 0.0;
        for (std::size_t k = 0; k < spec.len; ++k) {
          const std::size_t p = start + k * spec.stride;
          dot += self.grad[p] * self.value[p];
        }
        for (std::size_t k = 0; k < spec.len; ++k) {
          const std::size_t p = start + k * spec.stride;
          g[p] = self.value[p] * (self.grad[p] - dot);
        }
      }
      t.accum(ai, g);
    };
    return make(idx);
  }

  // ---- reductions ----------------------------------------------------------

  Var reduce_mean(Var a, int axis) {
    const Tensor& xv = value(a);
    const auto spec = detail::line_spec(xv, axis);
    Tensor out(detail::reduced_shape(xv, axis));
    for (std::size_t line = 0; line < spec.count; ++line) {
      const std::size_t start = line * spec.base;
      double sum = 0.0;
      for (std::size_t k = 0; k < spec.len; ++k) sum += xv[start + k * spec.stride];
      out[line] = sum / static_cast<double>(spec.len);
    }
    const int idx = new_node(std::move(out), {a.index_});
    node(idx).backprop = [ai = a.index_, spec](Tape& t, const Node& self) {
      Tensor g(t.node(ai).value.shape());
      for (std::size_t line = 0; line < spec.count; ++line) {
        const std::size_t start = line * spec.base;
        const double share = self.grad[line] / static_cast<double>(spec.len);
        for (std::size_t k = 0; k < spec.len; ++k) g[start + k * spec.stride] += share;
      }
      t.accum(ai, g);
    };
    return make(idx);
  }

  // ddof 0 = population, 1 = sample. Gradient keeps an epsilon under the
  // square root so constant lines do not blow up.
  Var reduce_std(Var a, int axis, int ddof = 0) {
    const Tensor& xv = value(a);
    const auto spec = detail::line_spec(xv, axis);
    if (spec.len <= static_cast<std::size_t>(ddof)) {
      throw DimensionError(strf("reduce_std: line length %zu too short for ddof %d", spec.len,
                                ddof));
    }
    const double denom = static_cast<double>(spec.len - static_cast<std::size_t>(ddof));
    Tensor out(detail::reduced_shape(xv, axis));
    std::vector<double> means(spec.count, 0.0);
    for (std::size_t line = 0; line < spec.count; ++line) {
      const std::size_t start = line * spec.base;
      double sum = 0.0;
      for (std::size_t k = 0; k < spec.len; ++k) sum += xv[start + k * spec.stride];
      const double mean = sum / static_cast<double>(spec.len);
      means[line] = mean;
      double ss = 0.0;
      for (std::size_t k = 0; k < spec.len; ++k) {
        const double c = xv[start + k * spec.stride] - mean;
        ss += c * c;
      }
      out[line] = std::sqrt(ss / denom);
    }
    const int idx = new_node(std::move(out), {a.index_});
    node(idx).backprop = [ai = a.index_, spec, denom, means](Tape& t, const Node& self) {
      const Tensor& xv2 = t.node(ai).value;
      Tensor g(xv2.shape());
      for (std::size_t line = 0; line < spec.count; ++line) {
        const std::size_t start = line * spec.base;
        const double sigma = self.value[line];
        const double guarded = std::sqrt(sigma * sigma + 1e-12);
        const double scale = self.grad[line] / (denom * guarded);
        for (std::size_t k = 0; k < spec.len; ++k) {
          const std::size_t p = start + k * spec.stride;
          g[p] += scale * (xv2[p] - means[line]);
        }
      }
      t.accum(ai, g);
    };
    return make(idx);
  }

  std::pair<Var, Var> reduce_stats(Var a, int axis) {
    return {reduce_mean(a, axis), reduce_std(a, axis, 0)};
  }

  Var sum_all(Var a) {
    const Tensor& xv = value(a);
    double sum = 0.0;
    for (double v : xv.data()) sum += v;
    const int idx = new_node(Tensor::scalar(sum), {a.index_});
    node(idx).backprop = [ai = a.index_](Tape& t, const Node& self) {
      Tensor g = Tensor::full(t.node(ai).value.shape(), self.grad[0]);
      t.accum(ai, g);
    };
    return make(idx);
  }

  Var l2_norm(Var a) {
    const Tensor& xv = value(a);
    double ss = 0.0;
    for (double v : xv.data()) ss += v * v;
    const double norm = std::sqrt(ss);
    const int idx = new_node(Tensor::scalar(norm), {a.index_});
    node(idx).backprop = [ai = a.index_, norm](Tape& t, const Node& self) {
      const Tensor& xv2 = t.node(ai).value;
      Tensor g(xv2.shape());
      const double scale = self.grad[0] / (norm + 1e-12);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * xv2[i];
      t.accum(ai, g);
    };
    return make(idx);
  }

  Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    for (const Var& v : parts) check_same_tape(parts.front(), v);
    const Tensor& first = value(parts.front());
    const std::size_t rank = first.rank();
    if (axis < 0 || static_cast<std::size_t>(axis) >= rank) {
      throw DimensionError("concat: axis out of range");
    }
    std::size_t axis_total = 0;
    for (const Var& v : parts) {
      const Tensor& tv = value(v);
      if (tv.rank() != rank) throw DimensionError("concat: rank mismatch");
      for (std::size_t d = 0; d < rank; ++d) {
        if (d != static_cast<std::size_t>(axis) && tv.shape()[d] != first.shape()[d]) {
          throw DimensionError("concat: shape mismatch off the concat axis");
        }
      }
      axis_total += tv.shape()[static_cast<std::size_t>(axis)];
    }
    std::vector<std::size_t> out_shape = first.shape();
    out_shape[static_cast<std::size_t>(axis)] = axis_total;
    Tensor out(out_shape);

    std::vector<int> parent_ids;
    parent_ids.reserve(parts.size());
    for (const Var& v : parts) parent_ids.push_back(v.index_);

    if (rank == 1 || axis == 0) {
      std::size_t offset = 0;
      for (const Var& v : parts) {
        const Tensor& tv = value(v);
        std::copy(tv.data().begin(), tv.data().end(), out.data().begin() + offset);
        offset += tv.size();
      }
    } else {
      const std::size_t n = first.rows();
      std::size_t col_offset = 0;
      for (const Var& v : parts) {
        const Tensor& tv = value(v);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < tv.cols(); ++j) {
            out.at(i, col_offset + j) = tv.at(i, j);
          }
        }
        col_offset += tv.cols();
      }
    }

    const int idx = new_node(std::move(out), parent_ids);
    node(idx).backprop = [parent_ids, axis, rank](Tape& t, const Node& self) {
      if (rank == 1 || axis == 0) {
        std::size_t offset = 0;
        for (int pid : parent_ids) {
          const Tensor& pv = t.node(pid).value;
          Tensor g(pv.shape());
          std::copy(self.grad.data().begin() + offset,
                    self.grad.data().begin() + offset + pv.size(), g.data().begin());
          offset += pv.size();
          t.accum(pid, g);
        }
      } else {
        std::size_t col_offset = 0;
        for (int pid : parent_ids) {
          const Tensor& pv = t.node(pid).value;
          Tensor g(pv.shape());
          for (std::size_t i = 0; i < pv.rows(); ++i) {
            for (std::size_t j = 0; j < pv.cols(); ++j) {
              g.at(i, j) = self.grad.at(i, col_offset + j);
            }
          }
          col_offset += pv.cols();
          t.accum(pid, g);
        }
      }
    };
    return make(idx);
  }

  // ---- reverse sweep -------------------------------------------------------

  // Seeds the scalar root with 1 and sweeps the tape once in reverse creation
  // order (a valid topological order by construction). Call at most once.
  GradMap backward(Var root) {
    if (root.tape_ != this) throw Error("backward: var belongs to another tape");
    Node& r = node(root.index_);
    if (r.value.size() != 1) {
      throw DimensionError("backward: root must be scalar, got " + shape_string(r.value));
    }
    ensure_grad(root.index_);
    r.grad[0] = 1.0;
    for (int i = root.index_; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.has_grad || !n.backprop) continue;
      n.backprop(*this, n);
    }
    GradMap map;
    for (const auto& [idx, p] : param_nodes_) {
      const Node& n = node(idx);
      Tensor g = n.has_grad ? n.grad : Tensor::zeros(p->tensor.shape());
      auto it = map.find(p->name);
      if (it == map.end()) {
        map.emplace(p->name, std::move(g));
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
      }
    }
    return map;
  }

  const Tensor& value(Var v) const { return node(v.index_).value; }

  Tensor grad(Var v) const {
    const Node& n = node(v.index_);
    return n.has_grad ? n.grad : Tensor::zeros(n.value.shape());
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  Node& node(int idx) { return nodes_[static_cast<std::size_t>(idx)]; }
  const Node& node(int idx) const { return nodes_[static_cast<std::size_t>(idx)]; }

  void accum(int idx, const Tensor& g) {
    Node& n = node(idx);
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

 private:
  friend class Var;

  int new_node(Tensor value, std::vector<int> parents) {
    nodes_.push_back(Node{std::move(value), Tensor(), false, std::move(parents), nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void ensure_grad(int idx) {
    Node& n = node(idx);
    if (!n.has_grad) {
      n.grad = Tensor::zeros(n.value.shape());
      n.has_grad = true;
    }
  }

  void check_same_tape(Var a, Var b) const {
    if (a.tape_ != b.tape_ || a.tape_ != this) {
      throw Error("op mixes vars from different tapes");
    }
  }

  Var make(int idx) { return Var(this, idx); }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, const Parameter*>> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline Tensor Var::grad() const { return tape_->grad(*this); }

inline Var operator+(Var a, Var b) { return a.tape()->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape()->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape()->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape()->div(a, b); }
inline Var operator-(Var a) { return a.tape()->neg(a); }
inline Var operator+(Var a, double s) { return a + a.tape()->constant(Tensor::scalar(s)); }
inline Var operator-(Var a, double s) { return a - a.tape()->constant(Tensor::scalar(s)); }
inline Var operator*(Var a, double s) { return a * a.tape()->constant(Tensor::scalar(s)); }
inline Var operator/(Var a, double s) { return a / a.tape()->constant(Tensor::scalar(s)); }
inline Var operator*(double s, Var a) { return a * s; }

// Central finite differences against the tape gradient; returns the worst
// per-coordinate relative error. `build` must produce a scalar Var from the
// leaf it is handed.
inline double grad_check(const std::function<Var(Tape&, Var)>& build, const Tensor& point,
                         double step = 1e-5) {
  Parameter p{"x", point, true};
  Tape tape;
  Var x = tape.param(p);
  Var y = build(tape, x);
  if (y.value().size() != 1) {
    throw DimensionError("grad_check: function must be scalar-valued");
  }
  GradMap grads = tape.backward(y);
  const Tensor& analytic = grads.at("x");

  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    Parameter probe{"x", point, true};
    probe.tensor[i] = point[i] + step;
    Tape tp;
    const double up = build(tp, tp.param(probe)).value().item();
    probe.tensor[i] = point[i] - step;
    Tape tm;
    const double down = build(tm, tm.param(probe)).value().item();
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-6});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / scale);
  }
  return worst;
}

}  // namespace dfl::ad
