#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "dfl/autodiff.hpp"

using dfl::Tensor;
using dfl::ad::GradMap;
using dfl::ad::Parameter;
using dfl::ad::Tape;
using dfl::ad::Var;
using dfl::ad::grad_check;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// Scalarizes a tensor-valued op with a fixed random weighting so grad_check
// probes a generic direction of the op's Jacobian.
Var weighted_sum(Tape& t, Var x, const Tensor& weights) {
  return t.sum_all(t.mul(x, t.constant(weights)));
}

}  // namespace

TEST_CASE("matmul basics") {
  Tape t;
  SECTION("identity passthrough") {
    Var I = t.constant(Tensor::identity(2));
    Var X = t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    Var Y = t.matmul(I, X);
    for (std::size_t i = 0; i < 6; ++i) {
      REQUIRE(Y.value()[i] == X.value()[i]);
    }
  }
  SECTION("hand product") {
    Var A = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    Var b = t.constant(Tensor::matrix(2, 1, {1, 1}));
    Var Y = t.matmul(A, b);
    REQUIRE(Y.value()[0] == Catch::Approx(3.0));
    REQUIRE(Y.value()[1] == Catch::Approx(7.0));
  }
  SECTION("shape mismatch rejected") {
    Var A = t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    Var B = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    REQUIRE_THROWS_AS(t.matmul(A, B), dfl::DimensionError);
  }
}

TEST_CASE("matmul gradient vs finite differences") {
  std::mt19937_64 rng(7);
  const Tensor b = random_tensor({4, 3}, rng);
  const Tensor w = random_tensor({5, 3}, rng);
  const Tensor point = random_tensor({5, 4}, rng);
  const double err_a = grad_check(
      [&](Tape& t, Var x) { return weighted_sum(t, t.matmul(x, t.constant(b)), w); }, point);
  REQUIRE(err_a < 1e-4);

  const Tensor a = random_tensor({5, 4}, rng);
  const Tensor point_b = random_tensor({4, 3}, rng);
  const double err_b = grad_check(
      [&](Tape& t, Var x) { return weighted_sum(t, t.matmul(t.constant(a), x), w); }, point_b);
  REQUIRE(err_b < 1e-4);
}

TEST_CASE("leaky_relu") {
  Tape t;
  Var x = t.constant(Tensor::vector({2.0, -2.0}));
  Var y = t.leaky_relu(x, 0.1);
  REQUIRE(y.value()[0] == Catch::Approx(2.0));
  REQUIRE(y.value()[1] == Catch::Approx(-0.2));

  Parameter p{"x", Tensor::vector({-1.0}), true};
  Tape t2;
  Var xv = t2.param(p);
  Var s = t2.sum_all(t2.leaky_relu(xv, 0.1));
  GradMap g = t2.backward(s);
  REQUIRE(g.at("x")[0] == Catch::Approx(0.1));

  REQUIRE_THROWS_AS(t.leaky_relu(x, 1.5), dfl::ConfigError);
}

TEST_CASE("softmax values") {
  Tape t;
  SECTION("uniform on equal scores") {
    Var y = t.softmax(t.constant(Tensor::vector({0, 0, 0})), 0);
    for (int i = 0; i < 3; ++i) REQUIRE(y.value()[i] == Catch::Approx(1.0 / 3.0));
  }
  SECTION("stable for large inputs") {
    Var y = t.softmax(t.constant(Tensor::vector({1000, 1000})), 0);
    REQUIRE(y.value()[0] == Catch::Approx(0.5));
    REQUIRE(y.value()[1] == Catch::Approx(0.5));
  }
  SECTION("closed form") {
    Var y = t.softmax(t.constant(Tensor::vector({0.0, std::log(3.0)})), 0);
    REQUIRE(y.value()[0] == Catch::Approx(0.25).epsilon(1e-10));
    REQUIRE(y.value()[1] == Catch::Approx(0.75).epsilon(1e-10));
  }
  SECTION("shift invariance per row") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor({3, 5}, rng);
      Tensor shifted = x;
      std::uniform_real_distribution<double> dist(-50.0, 50.0);
      for (std::size_t i = 0; i < 3; ++i) {
        const double c = dist(rng);
        for (std::size_t j = 0; j < 5; ++j) shifted.at(i, j) += c;
      }
      Tape tt;
      Var a = tt.softmax(tt.constant(x), 1);
      Var b = tt.softmax(tt.constant(shifted), 1);
      for (std::size_t i = 0; i < 15; ++i) {
        REQUIRE(std::fabs(a.value()[i] - b.value()[i]) < 1e-10);
      }
    }
  }
}

TEST_CASE("masked softmax") {
  SECTION("identity mask puts all weight on the diagonal") {
    Tape t;
    std::mt19937_64 rng(3);
    Var x = t.constant(random_tensor({4, 4}, rng));
    Var y = t.masked_softmax(x, Tensor::identity(4), 1);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        REQUIRE(y.value().at(i, j) == (i == j ? 1.0 : 0.0));
      }
    }
  }
  SECTION("two neighbors with uniform scores split evenly") {
    Tape t;
    Var x = t.constant(Tensor::matrix(1, 3, {5, 5, 5}));
    Var y = t.masked_softmax(x, Tensor::matrix(1, 3, {1, 1, 0}), 1);
    REQUIRE(y.value()[0] == Catch::Approx(0.5));
    REQUIRE(y.value()[1] == Catch::Approx(0.5));
    REQUIRE(y.value()[2] == 0.0);
  }
  SECTION("masked scores drop out of the normalization") {
    Tape t;
    Var x = t.constant(Tensor::matrix(1, 3, {1, 2, 3}));
    Var y = t.masked_softmax(x, Tensor::matrix(1, 3, {1, 0, 1}), 1);
    Var ref = t.softmax(t.constant(Tensor::vector({1, 3})), 0);
    REQUIRE(y.value()[0] == Catch::Approx(ref.value()[0]).epsilon(1e-12));
    REQUIRE(y.value()[1] == 0.0);
    REQUIRE(y.value()[2] == Catch::Approx(ref.value()[1]).epsilon(1e-12));
  }
  SECTION("fully masked row rejected") {
    Tape t;
    Var x = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    REQUIRE_THROWS_AS(t.masked_softmax(x, Tensor::matrix(2, 2, {1, 1, 0, 0}), 1),
                      dfl::DataError);
  }
  SECTION("rows sum to one, masked entries exactly zero") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t n = 2 + static_cast<std::size_t>(rng() % 6);
      Tensor x = random_tensor({n, n}, rng, -30.0, 30.0);
      Tensor mask = Tensor::zeros({n, n});
      for (std::size_t i = 0; i < n; ++i) {
        mask.at(i, i) = 1.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (rng() % 2 == 0) mask.at(i, j) = 1.0;
        }
      }
      Tape t;
      Var y = t.masked_softmax(t.constant(x), mask, 1);
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (mask.at(i, j) == 0.0) {
            REQUIRE(y.value().at(i, j) == 0.0);
          }
          sum += y.value().at(i, j);
        }
        REQUIRE(std::fabs(sum - 1.0) < 1e-10);
      }
    }
  }
}

TEST_CASE("reduce stats") {
  Tape t;
  SECTION("hand arithmetic") {
    auto [mean, sd] = t.reduce_stats(t.constant(Tensor::vector({1, 2, 3})), 0);
    REQUIRE(mean.value().item() == Catch::Approx(2.0));
    REQUIRE(sd.value().item() == Catch::Approx(std::sqrt(2.0 / 3.0)));
  }
  SECTION("constant vector has zero std") {
    auto [mean, sd] = t.reduce_stats(t.constant(Tensor::vector({4, 4, 4, 4})), 0);
    REQUIRE(mean.value().item() == Catch::Approx(4.0));
    REQUIRE(sd.value().item() == 0.0);
  }
  SECTION("single element") {
    auto [mean, sd] = t.reduce_stats(t.constant(Tensor::vector({7})), 0);
    REQUIRE(mean.value().item() == Catch::Approx(7.0));
    REQUIRE(sd.value().item() == 0.0);
  }
  SECTION("sample std needs two points") {
    Var x = t.constant(Tensor::vector({1}));
    REQUIRE_THROWS_AS(t.reduce_std(x, 0, 1), dfl::DimensionError);
  }
}

TEST_CASE("concat") {
  Tape t;
  SECTION("single input is identity") {
    Var x = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    Var y = t.concat({x}, 1);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(y.value()[i] == x.value()[i]);
  }
  SECTION("column concat shape law") {
    std::mt19937_64 rng(5);
    Var a = t.constant(random_tensor({3, 2}, rng));
    Var b = t.constant(random_tensor({3, 4}, rng));
    Var c = t.constant(random_tensor({3, 1}, rng));
    Var y = t.concat({a, b, c}, 1);
    REQUIRE(y.value().rows() == 3);
    REQUIRE(y.value().cols() == 7);
    REQUIRE(y.value().at(1, 0) == a.value().at(1, 0));
    REQUIRE(y.value().at(1, 2) == b.value().at(1, 0));
    REQUIRE(y.value().at(1, 6) == c.value().at(1, 0));
  }
  SECTION("gradient of sum over concat is ones for each input") {
    Parameter pa{"a", Tensor::matrix(2, 2, {1, 2, 3, 4}), true};
    Parameter pb{"b", Tensor::matrix(2, 3, {5, 6, 7, 8, 9, 10}), true};
    Tape t2;
    Var a = t2.param(pa);
    Var b = t2.param(pb);
    Var s = t2.sum_all(t2.concat({a, b}, 1));
    GradMap g = t2.backward(s);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(g.at("a")[i] == 1.0);
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(g.at("b")[i] == 1.0);
  }
  SECTION("off-axis shape mismatch rejected") {
    Var a = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    Var b = t.constant(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
    REQUIRE_THROWS_AS(t.concat({a, b}, 1), dfl::DimensionError);
  }
}

TEST_CASE("l2 norm") {
  Tape t;
  Var x = t.constant(Tensor::vector({3, 4}));
  REQUIRE(t.l2_norm(x).value().item() == Catch::Approx(5.0));

  Parameter pz{"z", Tensor::vector({0, 0, 0}), true};
  Tape t2;
  Var z = t2.param(pz);
  Var n = t2.l2_norm(z);
  REQUIRE(n.value().item() == 0.0);
  GradMap g = t2.backward(n);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(g.at("z")[i] == 0.0);

  std::mt19937_64 rng(23);
  const double err = grad_check([](Tape& tt, Var v) { return tt.l2_norm(v); },
                                random_tensor({6}, rng));
  REQUIRE(err < 1e-4);
}

TEST_CASE("backward mechanics") {
  SECTION("sum of squares") {
    Parameter p{"p", Tensor::vector({1, 2}), true};
    Tape t;
    Var x = t.param(p);
    Var loss = t.sum_all(t.mul(x, x));
    GradMap g = t.backward(loss);
    REQUIRE(g.at("p")[0] == Catch::Approx(2.0));
    REQUIRE(g.at("p")[1] == Catch::Approx(4.0));
  }
  SECTION("unused parameter gets zero gradient") {
    Parameter used{"used", Tensor::vector({1.0}), true};
    Parameter unused{"unused", Tensor::vector({5.0, 6.0}), true};
    Tape t;
    Var x = t.param(used);
    t.param(unused);
    GradMap g = t.backward(t.sum_all(t.mul(x, x)));
    REQUIRE(g.at("unused")[0] == 0.0);
    REQUIRE(g.at("unused")[1] == 0.0);
  }
  SECTION("non-scalar root rejected") {
    Tape t;
    Var x = t.constant(Tensor::vector({1, 2}));
    REQUIRE_THROWS_AS(t.backward(x), dfl::DimensionError);
  }
  SECTION("parameter reused twice accumulates both contributions") {
    std::mt19937_64 rng(31);
    const Tensor point = random_tensor({3}, rng);
    const Tensor c = random_tensor({3}, rng);
    auto build = [&](Tape& t, Var x) {
      // x appears in both terms: sum(x*x) + sum(c*x)
      return t.add(t.sum_all(t.mul(x, x)), t.sum_all(t.mul(t.constant(c), x)));
    };
    REQUIRE(grad_check(build, point) < 1e-4);
  }
}

TEST_CASE("gradient checks across all registered ops") {
  std::mt19937_64 rng(101);
  const Tensor w44 = random_tensor({4, 4}, rng);
  const Tensor w43 = random_tensor({4, 3}, rng);
  const Tensor w41 = random_tensor({4, 1}, rng);
  const Tensor w14 = random_tensor({1, 4}, rng);
  const Tensor w34 = random_tensor({3, 4}, rng);
  const Tensor mask = Tensor::matrix(4, 4, {1, 1, 0, 0,  //
                                            1, 1, 0, 1,  //
                                            0, 0, 1, 0,  //
                                            0, 1, 0, 1});

  struct Case {
    const char* name;
    std::function<Var(Tape&, Var)> fn;
    std::vector<std::size_t> shape;
    double tol;
  };
  std::vector<Case> cases = {
      {"add_row", [&](Tape& t, Var x) { return weighted_sum(t, t.add(t.constant(w34), x), w34); },
       {1, 4}, 1e-4},
      {"sub_col", [&](Tape& t, Var x) { return weighted_sum(t, t.sub(t.constant(w34), x), w34); },
       {3, 1}, 1e-4},
      {"mul_bcast",
       [&](Tape& t, Var x) { return weighted_sum(t, t.mul(t.constant(w34), x), w34); },
       {1, 4}, 1e-4},
      {"div_scalar",
       [&](Tape& t, Var x) { return weighted_sum(t, t.div(t.constant(w34), x + 4.0), w34); },
       {1}, 1e-4},
      {"div_elementwise",
       [&](Tape& t, Var x) { return weighted_sum(t, t.div(t.constant(w44), x + 4.0), w44); },
       {4, 4}, 1e-4},
      {"neg", [&](Tape& t, Var x) { return weighted_sum(t, t.neg(x), w34); }, {3, 4}, 1e-4},
      {"matmul",
       [&](Tape& t, Var x) {
         Var y = t.matmul(x, t.constant(w43));
         return t.sum_all(t.mul(y, y));
       },
       {3, 4}, 1e-4},
      {"transpose",
       [&](Tape& t, Var x) { return weighted_sum(t, t.transpose(x), w34); }, {4, 3}, 1e-4},
      {"pairwise_sum",
       [&](Tape& t, Var x) {
         return weighted_sum(t, t.pairwise_sum(x, t.constant(w41)), w44);
       },
       {4, 1}, 1e-4},
      {"leaky_relu",
       [&](Tape& t, Var x) { return weighted_sum(t, t.leaky_relu(x, 0.2), w34); }, {3, 4}, 1e-4},
      {"softmax_rows",
       [&](Tape& t, Var x) { return weighted_sum(t, t.softmax(x, 1), w34); }, {3, 4}, 1e-3},
      {"softmax_cols",
       [&](Tape& t, Var x) { return weighted_sum(t, t.softmax(x, 0), w34); }, {3, 4}, 1e-3},
      {"masked_softmax",
       [&](Tape& t, Var x) { return weighted_sum(t, t.masked_softmax(x, mask, 1), w44); },
       {4, 4}, 1e-3},
      {"reduce_mean_rows",
       [&](Tape& t, Var x) { return weighted_sum(t, t.reduce_mean(x, 0), w14); }, {3, 4}, 1e-4},
      {"reduce_std_pop",
       [&](Tape& t, Var x) { return weighted_sum(t, t.reduce_std(x, 0, 0), w14); }, {3, 4}, 1e-3},
      {"reduce_std_sample",
       [&](Tape& t, Var x) { return weighted_sum(t, t.reduce_std(x, 1, 1), w41); }, {4, 4}, 1e-3},
      {"sum_all", [&](Tape& t, Var x) { return t.sum_all(x); }, {3, 4}, 1e-4},
      {"concat_cols",
       [&](Tape& t, Var x) {
         return weighted_sum(t, t.concat({x, t.constant(w41)}, 1), w44);
       },
       {4, 3}, 1e-4},
      {"l2_norm", [&](Tape& t, Var x) { return t.l2_norm(x); }, {3, 4}, 1e-4},
  };

  for (const auto& c : cases) {
    INFO(c.name);
    for (int point = 0; point < 5; ++point) {
      Tensor x = random_tensor(c.shape, rng);
      const double err = grad_check(c.fn, x, 1e-5);
      INFO("point " << point << " err " << err);
      REQUIRE(err < c.tol);
    }
  }
}

TEST_CASE("softmax and std compositions stay within loose tolerance") {
  std::mt19937_64 rng(55);
  const Tensor w = random_tensor({4, 4}, rng);
  auto composite = [&](Tape& t, Var x) {
    Var s = t.softmax(x, 1);
    auto [mean, sd] = t.reduce_stats(s, 0);
    Var z = t.div(t.sub(s, mean), sd + 0.5);
    return weighted_sum(t, z, w);
  };
  for (int point = 0; point < 5; ++point) {
    const double err = grad_check(composite, random_tensor({4, 4}, rng), 1e-5);
    REQUIRE(err < 1e-3);
  }
}
