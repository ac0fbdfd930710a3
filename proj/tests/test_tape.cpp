#include "doctest.h"
#include "oracles.hpp"

#include "aspmtl/errors.hpp"
#include "aspmtl/gradcheck.hpp"
#include "aspmtl/tape.hpp"

#include <cmath>
#include <cstring>
#include <random>

using namespace aspmtl;

TEST_CASE("matmul hand products") {
  Tape t;
  auto i2 = t.constant(Tensor::Identity(2, 2));
  auto v = t.constant(column({3, 4}));
  CHECK(matmul(i2, v).value() == column({3, 4}));
  Tensor a(1, 2);
  a << 1, 2;
  CHECK(matmul(t.constant(a), v).scalar() == 11.0);
}

TEST_CASE("matmul matches triple loop") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor a = oracle::random(3, 4, rng), b = oracle::random(4, 2, rng);
    Tape t;
    Tensor got = matmul(t.constant(a), t.constant(b)).value();
    CHECK((got - oracle::matmul(a, b)).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("shape errors name both shapes") {
  Tape t;
  auto a = t.constant(Tensor::Zero(2, 3));
  auto b = t.constant(Tensor::Zero(2, 3));
  try {
    matmul(a, b);
    FAIL("no throw");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, t.constant(Tensor::Zero(3, 2))), ShapeError);
  CHECK_THROWS_AS(mul(a, t.constant(Tensor::Zero(1, 3))), ShapeError);
  CHECK_THROWS_AS(add_bias(a, t.constant(Tensor::Zero(2, 1))), ShapeError);
  CHECK_THROWS_AS(concat({a, t.constant(Tensor::Zero(2, 2))}, Axis::Rows), ShapeError);
}

TEST_CASE("elementwise values") {
  Tape t;
  CHECK(sigmoid(t.constant(column({0}))).scalar() == 0.5);
  CHECK(tanh(t.constant(column({0}))).scalar() == 0.0);
  Tensor xs = column({-2, -1, 1, 2});
  Tensor s = sigmoid(t.constant(xs)).value();
  for (Index i = 0; i < 4; ++i) CHECK(std::abs(s(i, 0) - 1.0 / (1.0 + std::exp(-xs(i, 0)))) <= 1e-12);
  Tensor big = column({-800, 800});
  Tensor sb = sigmoid(t.constant(big)).value();
  CHECK(sb(0, 0) >= 0.0);
  CHECK(sb(1, 0) == 1.0);
  CHECK(all_finite(sb));
}

TEST_CASE("backward simple cases") {
  Tape t;
  auto p = t.parameter("p", column({1, 2, 3}));
  auto g = t.backward(sum(p));
  CHECK(g.at("p") == column({1, 1, 1}));

  Tape t2;
  auto q = t2.parameter("q", column({1, 2}));
  CHECK(t2.backward(sum(mul(q, q))).at("q") == column({2, 4}));

  Tape t3;
  auto used = t3.parameter("used", column({1}));
  t3.parameter("unused", Tensor::Ones(2, 3));
  auto g3 = t3.backward(sum(used));
  CHECK(g3.at("unused") == Tensor::Zero(2, 3));

  Tape t4;
  auto r = t4.parameter("r", column({1, 2}));
  CHECK_THROWS_AS(t4.backward(r), ContractError);
}

TEST_CASE("node reuse accumulates") {
  Tape t;
  auto p = t.parameter("p", column({3}));
  auto y = add(mul(p, p), scale(p, 2.0));
  CHECK(t.backward(sum(y)).at("p")(0, 0) == doctest::Approx(8.0).epsilon(1e-15));
}

TEST_CASE("gradient reversal node") {
  Tape t;
  Tensor x0 = column({1.0, 2.0});
  auto x = t.parameter("x", x0);
  auto r = gradient_reversal(x, {1.0});
  CHECK(r.value() == x0);
  auto up = t.constant(column({0.5, -0.5}));
  CHECK(t.backward(sum(mul(r, up))).at("x") == column({-0.5, 0.5}));

  Tape t2;
  auto y = t2.parameter("y", column({1.0}));
  CHECK(t2.backward(sum(gradient_reversal(y, {0.05}))).at("y")(0, 0) == -0.05);

  Tape t3;
  CHECK_THROWS_AS(gradient_reversal(t3.parameter("z", column({1})), {-1.0}), ConfigError);
  CHECK_THROWS_AS(gradient_reversal(t3.parameter("z", column({1})), {std::nan("")}), ConfigError);

  Tape id(ReversalMode::Identity);
  auto w = id.parameter("w", column({1.0}));
  CHECK(id.backward(sum(gradient_reversal(w, {0.05}))).at("w")(0, 0) == 1.0);
}

TEST_CASE("reversal forward is bitwise identity and composes multiplicatively") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x0 = oracle::random(3, 2, rng, 1e3);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    const double a = u(rng), b = u(rng);
    Tape t;
    auto x = t.parameter("x", x0);
    auto r = gradient_reversal(gradient_reversal(x, {a}), {b});
    CHECK(std::memcmp(r.value().data(), x0.data(), sizeof(double) * 6) == 0);
    Tensor g = t.backward(sum(r)).at("x");
    for (Index i = 0; i < g.size(); ++i) CHECK(g.data()[i] == doctest::Approx(a * b).epsilon(1e-15));
  }
}

TEST_CASE("softmax and nll") {
  Tape t;
  auto p = softmax(t.constant(column({std::log(1.0), std::log(3.0)})));
  CHECK(p.value()(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(p.value()(1, 0) == doctest::Approx(0.75).epsilon(1e-14));
  auto stable = softmax(t.constant(column({1000, -1000, 999})));
  CHECK(std::abs(stable.value().sum() - 1.0) <= 1e-9);
  CHECK(t.clamp_count() == 0);
  auto zero = t.constant(column({1.0, 0.0}));
  CHECK(nll(zero, 1).scalar() == doctest::Approx(-std::log(kLogClamp)));
  CHECK(t.clamp_count() == 1);
}

TEST_CASE("lookup rejects out-of-range ids and scatters gradients") {
  Tape t;
  auto table = t.parameter("E", Tensor::Ones(4, 2));
  std::vector<int> ids{1, 3, 1};
  auto rows = lookup(table, std::span<const int>(ids));
  CHECK(rows.rows() == 3);
  Tensor g = t.backward(sum(rows)).at("E");
  CHECK(g(0, 0) == 0.0);
  CHECK(g(1, 0) == 2.0);
  CHECK(g(3, 1) == 1.0);
  std::vector<int> bad{4};
  CHECK_THROWS_AS(lookup(table, std::span<const int>(bad)), InputError);
}

namespace {

// Applies every differentiable op once; all parameters reach the loss.
Var composite(Tape& t, const VarMap& v) {
  auto a = v.at("a"), b = v.at("b"), bias = v.at("bias"), s = v.at("s");
  auto m = add_bias(matmul(a, b), bias);                         // [3x2]
  auto e = mul(sigmoid(m), tanh(scale(m, 0.7)));                 // [3x2]
  auto c = concat({e, transpose(slice_rows(transpose(e), 0, 2))}, Axis::Rows);  // [6x2]
  auto r = row(c, 4);                                            // [2x1]
  auto probs = softmax(add(r, slice_rows(s, 0, 2)));
  auto rev = gradient_reversal(s, {0.3});
  std::vector<Var> parts{sum_squares(c), nll(probs, 1), sum(mul(rev, rev))};
  std::vector<double> w{0.5, 1.0, 0.2};
  std::vector<Var> means{weighted_sum(std::span<const Var>(parts), std::span<const double>(w)), sum(r)};
  (void)t;
  return mean(std::span<const Var>(means));
}

}  // namespace

TEST_CASE("every op passes finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    ParamMap p{{"a", oracle::random(3, 4, rng)},
               {"b", oracle::random(4, 2, rng)},
               {"bias", oracle::random(2, 1, rng)},
               {"s", oracle::random(3, 1, rng)}};
    const FdReport r = finite_difference_check<double>(composite, p, {});
    CHECK_MESSAGE(r.max_rel_error < 1e-6, r.worst_param, " ", r.worst_index);
    CHECK_FALSE(r.nan_seen);
  }
}

TEST_CASE("finite-difference check against reversed scale") {
  std::mt19937_64 rng(3);
  ParamMap p{{"x", oracle::random(3, 1, rng)}};
  LossBuilder fn = [](Tape&, const VarMap& v) {
    auto r = gradient_reversal(v.at("x"), {0.05});
    return sum(mul(tanh(r), r));
  };
  FdOptions opts;
  opts.reversed_scale = 0.05;
  CHECK(finite_difference_check(fn, p, opts).max_rel_error < 1e-8);
  CHECK(finite_difference_check(fn, p, {}).max_rel_error < 1e-8);
}

TEST_CASE("linear loss gives near-zero relative error") {
  ParamMap p{{"x", column({1, -2, 3})}};
  LossBuilder fn = [](Tape& t, const VarMap& v) { return sum(matmul(t.constant(Tensor::Constant(1, 3, 2.0)), v.at("x"))); };
  for (double eps : {1e-3, 1e-5, 1e-7}) {
    FdOptions o;
    o.eps = eps;
    CHECK(finite_difference_check(fn, p, o).max_rel_error < 1e-6);
  }
}

TEST_CASE("finite-difference check reports NaN as failure") {
  ParamMap p{{"x", column({-1.0})}};
  LossBuilder fn = [](Tape& t, const VarMap& v) {
    Tensor val = v.at("x").value().array().sqrt().matrix();
    return sum(add(v.at("x"), t.constant(val)));
  };
  const FdReport r = finite_difference_check(fn, p, {});
  CHECK(r.nan_seen);
  CHECK(std::isinf(r.max_rel_error));
}

TEST_CASE("tape is deterministic") {
  std::mt19937_64 rng(5);
  ParamMap p{{"a", oracle::random(3, 4, rng)},
             {"b", oracle::random(4, 2, rng)},
             {"bias", oracle::random(2, 1, rng)},
             {"s", oracle::random(3, 1, rng)}};
  auto g1 = analytic_gradients<double>(composite, p, ReversalMode::Reverse);
  auto g2 = analytic_gradients<double>(composite, p, ReversalMode::Reverse);
  for (const auto& [name, g] : g1) CHECK(std::memcmp(g.data(), g2.at(name).data(), sizeof(double) * g.size()) == 0);
}

TEST_CASE("tape works in long double") {
  BasicTape<long double> t;
  TensorT<long double> x(2, 1);
  x << 1.0L, 2.0L;
  auto p = t.parameter("p", x);
  auto g = t.backward(sum(mul(p, p)));
  CHECK(g.at("p")(1, 0) == 4.0L);
}
