#include "doctest.h"
#include "oracles.hpp"

#include "aspmtl/errors.hpp"
#include "aspmtl/gradcheck.hpp"
#include "aspmtl/nn.hpp"

#include <sstream>

using namespace aspmtl;

namespace {

LstmParams random_lstm(Index d, Index e, std::mt19937_64& rng, double range = 0.8) {
  return LstmParams{oracle::random(4 * d, e + d, rng, range), oracle::random(4 * d, 1, rng, range)};
}

}  // namespace

TEST_CASE("lstm_step zero parameters") {
  LstmParams p = LstmParams::zeros(3, 2);
  LstmState s = lstm_step(column({1, -1}), Tensor::Zero(3, 1), Tensor::Zero(3, 1), p);
  CHECK(s.c == Tensor::Zero(3, 1));
  CHECK(s.h == Tensor::Zero(3, 1));

  Tensor v = column({1.0, -2.0, 0.5});
  s = lstm_step(column({1, -1}), Tensor::Zero(3, 1), v, p);
  for (Index i = 0; i < 3; ++i) {
    CHECK(s.c(i, 0) == doctest::Approx(0.5 * v(i, 0)).epsilon(1e-15));
    CHECK(s.h(i, 0) == doctest::Approx(0.5 * std::tanh(0.5 * v(i, 0))).epsilon(1e-15));
  }
}

TEST_CASE("lstm_step matches scalar loop") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    LstmParams p = random_lstm(2, 2, rng);
    Tensor x = oracle::random(2, 1, rng), h = oracle::random(2, 1, rng), c = oracle::random(2, 1, rng);
    LstmState got = lstm_step(x, h, c, p);
    oracle::Step want = oracle::lstm_step(oracle::col(x), oracle::col(h), oracle::col(c), p.weight, p.bias);
    for (Index i = 0; i < 2; ++i) {
      CHECK(std::abs(got.h(i, 0) - want.h[static_cast<std::size_t>(i)]) <= 1e-12);
      CHECK(std::abs(got.c(i, 0) - want.c[static_cast<std::size_t>(i)]) <= 1e-12);
    }
  }
}

TEST_CASE("lstm_step shape errors") {
  LstmParams p = LstmParams::zeros(3, 2);
  CHECK_THROWS_AS(lstm_step(column({1, 2, 3}), Tensor::Zero(3, 1), Tensor::Zero(3, 1), p), ShapeError);
  CHECK_THROWS_AS(lstm_step(column({1, 2}), Tensor::Zero(2, 1), Tensor::Zero(3, 1), p), ShapeError);
  LstmParams bad{Tensor::Zero(6, 5), Tensor::Zero(6, 1)};
  CHECK_THROWS_AS(lstm_step(column({1, 2}), Tensor::Zero(3, 1), Tensor::Zero(3, 1), bad), ShapeError);
}

TEST_CASE("lstm_encode folds steps") {
  std::mt19937_64 rng(9);
  LstmParams p = random_lstm(3, 2, rng);
  Tensor xs = oracle::random(3, 2, rng);
  EncodeResult r = lstm_encode(xs, p);
  std::vector<double> h(3, 0.0), c(3, 0.0);
  for (Index t = 0; t < 3; ++t) {
    auto s = oracle::lstm_step(oracle::col(xs.row(t).transpose()), h, c, p.weight, p.bias);
    h = s.h;
    c = s.c;
    for (Index i = 0; i < 3; ++i) CHECK(std::abs(r.all_h(t, i) - h[static_cast<std::size_t>(i)]) <= 1e-12);
  }
  CHECK(r.all_h.row(2).transpose() == r.final_h);

  LstmState single = lstm_step(xs.row(0).transpose(), Tensor::Zero(3, 1), Tensor::Zero(3, 1), p);
  CHECK(lstm_encode(xs.topRows(1), p).final_h == single.h);
  CHECK(lstm_encode(xs, LstmParams::zeros(3, 2)).final_h == Tensor::Zero(3, 1));
  CHECK_THROWS_AS(lstm_encode(Tensor(0, 2), p), InputError);
}

TEST_CASE("gates stay in range") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    LstmParams p = random_lstm(4, 3, rng, 5.0);
    EncodeResult r = lstm_encode(oracle::random(6, 3, rng, 5.0), p);
    CHECK(r.all_h.cwiseAbs().maxCoeff() <= 1.0);
    CHECK(all_finite(r.all_h));
  }
}

TEST_CASE("tape encoder agrees with value encoder and primitive graph") {
  std::mt19937_64 rng(12);
  LstmParams p = random_lstm(4, 3, rng);
  Tensor xs = oracle::random(5, 3, rng);
  EncodeResult want = lstm_encode(xs, p);
  Tape t;
  LstmVars v{t.parameter("w", p.weight), t.parameter("b", p.bias)};
  EncodedSequence enc = lstm_encode(t.constant(xs), v);
  CHECK((enc.final_h.value() - want.final_h).cwiseAbs().maxCoeff() == 0.0);
  CHECK((enc.hidden_matrix().value() - want.all_h).cwiseAbs().maxCoeff() == 0.0);

  Var h = t.constant(Tensor::Zero(4, 1)), c = t.constant(Tensor::Zero(4, 1));
  Var xv = t.constant(xs);
  for (Index s = 0; s < 5; ++s) std::tie(h, c) = lstm_step_graph(row(xv, s), h, c, v);
  CHECK((h.value() - want.final_h).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("fused cell gradients match primitive graph") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    LstmParams p = random_lstm(3, 2, rng);
    Tensor xs = oracle::random(4, 2, rng);
    Tensor probe = oracle::random(3, 1, rng);
    auto run = [&](bool fused) {
      Tape t;
      LstmVars v{t.parameter("w", p.weight), t.parameter("b", p.bias)};
      Var x = t.parameter("x", xs);
      Var h;
      if (fused) {
        h = lstm_encode(x, v).final_h;
      } else {
        h = t.constant(Tensor::Zero(3, 1));
        Var c = t.constant(Tensor::Zero(3, 1));
        for (Index s = 0; s < 4; ++s) std::tie(h, c) = lstm_step_graph(row(x, s), h, c, v);
      }
      return t.backward(sum(mul(tanh(h), t.constant(probe))));
    };
    auto a = run(true), b = run(false);
    for (const auto& [name, g] : a) CHECK((g - b.at(name)).cwiseAbs().maxCoeff() <= 1e-13);
  }
}

TEST_CASE("encoder gradients pass finite differences") {
  for (Index T : {1, 3, 7}) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(T));
    LstmParams p = random_lstm(4, 3, rng);
    Tensor probe = oracle::random(4, 1, rng);
    ParamMap params{{"w", p.weight}, {"b", p.bias}, {"x", oracle::random(T, 3, rng)}};
    LossBuilder fn = [&](Tape& t, const VarMap& v) {
      EncodedSequence enc = lstm_encode(v.at("x"), LstmVars{v.at("w"), v.at("b")});
      return add(sum(mul(enc.final_h, t.constant(probe))), sum_squares(enc.hidden_matrix()));
    };
    const FdReport r = finite_difference_check(fn, params, {});
    CHECK_MESSAGE(r.max_rel_error < 1e-6, "T=", T, " ", r.worst_param);
  }
}

TEST_CASE("d=4 lstm step composite loss under finite differences") {
  std::mt19937_64 rng(21);
  LstmParams p = random_lstm(4, 4, rng);
  ParamMap params{{"w", p.weight}, {"b", p.bias}, {"x", oracle::random(4, 1, rng)}, {"h", oracle::random(4, 1, rng)},
                  {"c", oracle::random(4, 1, rng)}};
  LossBuilder fn = [](Tape&, const VarMap& v) {
    auto [h, c] = lstm_step_graph(v.at("x"), v.at("h"), v.at("c"), LstmVars{v.at("w"), v.at("b")});
    return nll(softmax(mul(h, c)), 2);
  };
  CHECK(finite_difference_check(fn, params, {}).max_rel_error < 1e-6);
}

TEST_CASE("softmax_classify") {
  SoftmaxHead zero = SoftmaxHead::zeros(2, 3);
  Tensor p = softmax_classify(column({1, 2, 3}), zero);
  CHECK(p == column({0.5, 0.5}));

  SoftmaxHead h{Tensor::Zero(2, 1), column({std::log(1.0), std::log(3.0)})};
  p = softmax_classify(column({7}), h);
  CHECK(p(0, 0) == doctest::Approx(0.25).epsilon(1e-14));

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    SoftmaxHead head{oracle::random(3, 4, rng), oracle::random(3, 1, rng)};
    Tensor x = oracle::random(4, 1, rng);
    auto want = oracle::affine_softmax(head.weight, head.bias, oracle::col(x));
    Tensor got = softmax_classify(x, head);
    for (Index i = 0; i < 3; ++i) CHECK(std::abs(got(i, 0) - want[static_cast<std::size_t>(i)]) <= 1e-12);
  }

  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    SoftmaxHead head{Tensor::Zero(5, 1), oracle::random(5, 1, rng, 1e3)};
    Tensor q = softmax_classify(column({0}), head);
    CHECK(std::abs(q.sum() - 1.0) <= 1e-9);
    CHECK(all_finite(q));
  }
  CHECK_THROWS_AS(softmax_classify(column({1, 2}), zero), ShapeError);
}

TEST_CASE("initialization") {
  std::mt19937_64 a(5), b(5);
  LstmParams p = init_lstm(8, 6, a);
  CHECK(p.weight.rows() == 32);
  CHECK(p.weight.cols() == 14);
  CHECK(p.weight.cwiseAbs().maxCoeff() <= 0.1);
  CHECK(p.bias.cwiseAbs().maxCoeff() <= 0.1);
  CHECK(init_lstm(8, 6, b).weight == p.weight);

  std::mt19937_64 rng(17);
  Tensor big = uniform_tensor(1000, 100, rng);
  CHECK(std::abs(big.mean()) <= 0.005);
  CHECK(big.cwiseAbs().maxCoeff() <= 0.1);
}

TEST_CASE("embedding file loader") {
  std::mt19937_64 rng(1);
  EmbeddingTable table = init_embeddings(4, 3, rng);
  const Tensor before = table.matrix;
  std::unordered_map<std::string, int> vocab{{"good", 2}, {"bad", 3}};
  std::istringstream in("good 1 2 3\nunknown 9 9 9\nbad -1 -2 -3\n");
  CHECK(load_embeddings(in, vocab, table) == 2);
  CHECK(table.matrix.row(2) == Tensor(column({1, 2, 3}).transpose()));
  CHECK(table.matrix.row(3) == Tensor(column({-1, -2, -3}).transpose()));
  CHECK(table.matrix.row(1) == before.row(1));

  std::istringstream bad("good 1 2\n");
  CHECK_THROWS_AS(load_embeddings(bad, vocab, table), InputError);
}
