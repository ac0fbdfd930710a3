#include "doctest.h"
#include "oracles.hpp"

#include "aspmtl/errors.hpp"
#include "aspmtl/gradcheck.hpp"
#include "aspmtl/losses.hpp"

#include <cmath>

using namespace aspmtl;

namespace {

Tensor random_distribution(Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Tensor p(c, 1);
  for (Index i = 0; i < c; ++i) p(i, 0) = u(rng);
  return p / p.sum();
}

Tensor onehot(Index c, Index k) {
  Tensor t = Tensor::Zero(c, 1);
  t(k, 0) = 1.0;
  return t;
}

}  // namespace

TEST_CASE("cross_entropy closed forms") {
  Tape t;
  CHECK(cross_entropy(t.constant(onehot(3, 1)), onehot(3, 1)).scalar() == 0.0);
  CHECK(cross_entropy(t.constant(column({0.5, 0.5})), onehot(2, 0)).scalar() ==
        doctest::Approx(0.693147).epsilon(1e-6));
  CHECK_THROWS_AS(cross_entropy(t.constant(column({0.5, 0.5})), column({1, 1})), InputError);
  CHECK_THROWS_AS(cross_entropy(t.constant(column({0.5, 0.5})), column({0, 0})), InputError);
  CHECK_THROWS_AS(cross_entropy(t.constant(column({0.5, 0.5})), onehot(3, 0)), ShapeError);
}

TEST_CASE("cross_entropy at zero probability clamps and counts") {
  Tape t;
  Var v = cross_entropy(t.constant(column({1.0, 0.0})), onehot(2, 1));
  CHECK(std::isfinite(v.scalar()));
  CHECK(t.clamp_count() == 1);
}

TEST_CASE("cross_entropy matches brute force") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const Index c = 2 + rep % 4;
    Tensor p = random_distribution(c, rng);
    const Index k = rep % c;
    double want = 0.0;
    for (Index j = 0; j < c; ++j) want -= (j == k ? 1.0 : 0.0) * std::log(p(j, 0));
    Tape t;
    CHECK(std::abs(cross_entropy(t.constant(p), onehot(c, k)).scalar() - want) <= 1e-12);
  }
}

TEST_CASE("batch cross_entropy is the mean of sample losses") {
  std::mt19937_64 rng(4);
  Tape t;
  std::vector<Var> probs;
  std::vector<Index> labels;
  double want = 0.0;
  for (Index i = 0; i < 4; ++i) {
    Tensor p = random_distribution(3, rng);
    probs.push_back(t.constant(p));
    labels.push_back(i % 3);
    want += -std::log(p(i % 3, 0)) / 4.0;
  }
  CHECK(std::abs(cross_entropy(std::span<const Var>(probs), std::span<const Index>(labels)).scalar() - want) <=
        1e-12);
}

TEST_CASE("task_loss weights") {
  Tape t;
  std::vector<std::pair<std::size_t, Var>> one{{0, t.constant(column({0.7}))}};
  CHECK(task_loss(one, LossWeights{}).scalar() == 0.7);

  std::vector<std::pair<std::size_t, Var>> three{
      {0, t.constant(column({0.3}))}, {1, t.constant(column({1.1}))}, {2, t.constant(column({2.6}))}};
  CHECK(std::abs(task_loss(three, LossWeights{0, 0, {1, 1, 1}}).scalar() - (0.3 + 1.1 + 2.6)) <= 1e-12);
  CHECK(std::abs(task_loss(three, LossWeights{0, 0, {1, 0, 1}}).scalar() - (0.3 + 2.6)) <= 1e-12);
  CHECK_THROWS_AS(task_loss(three, LossWeights{0, 0, {1, 1}}), ConfigError);
  CHECK_THROWS_AS(LossWeights({-1, 0, {}}).validate(), ConfigError);
  CHECK_THROWS_AS(LossWeights({0, 0, {1, std::nan("")}}).validate(), ConfigError);
}

TEST_CASE("adversarial loss") {
  Tape t;
  HeadVars disc{t.constant(Tensor::Zero(4, 3)), t.constant(Tensor::Zero(4, 1))};
  for (Index k = 0; k < 4; ++k) {
    CHECK(adversarial_loss(t.constant(column({0.3, -2, 5})), k, disc, {0.05}).scalar() ==
          doctest::Approx(1.386294).epsilon(1e-6));
  }
  HeadVars one{t.constant(Tensor::Zero(1, 3)), t.constant(Tensor::Zero(1, 1))};
  CHECK_THROWS_AS(adversarial_loss(t.constant(column({0, 0, 0})), 0, one, {}), ConfigError);
  CHECK_THROWS_AS(adversarial_loss(t.constant(column({0, 0, 0})), 4, disc, {}), InputError);
}

TEST_CASE("adversarial gradient into the encoder input is -lambda times the identity gradient") {
  for (double lambda : {0.0, 0.05, 1.0}) {
    std::mt19937_64 rng(8);
    Tensor s = oracle::random(3, 1, rng), u = oracle::random(4, 3, rng), b = oracle::random(4, 1, rng);
    auto grad = [&](ReversalMode mode) {
      Tape t(mode);
      Var sv = t.parameter("s", s);
      HeadVars disc{t.parameter("u", u), t.parameter("b", b)};
      return t.backward(adversarial_loss(sv, 2, disc, {lambda}));
    };
    auto rev = grad(ReversalMode::Reverse), id = grad(ReversalMode::Identity);
    CHECK(((rev.at("s") + lambda * id.at("s")).cwiseAbs().maxCoeff()) <= 1e-12);
    CHECK(rev.at("u") == id.at("u"));
  }
}

TEST_CASE("diff_loss hand cases") {
  Tape t;
  Tensor s(1, 2), h(1, 2);
  s << 1, 0;
  h << 0, 1;
  CHECK(diff_loss(t.constant(s), t.constant(h)).scalar() == 1.0);
  CHECK(diff_loss(t.constant(s), t.constant(Tensor::Zero(1, 2))).scalar() == 0.0);
  CHECK_THROWS_AS(diff_loss(t.constant(Tensor::Zero(2, 3)), t.constant(Tensor::Zero(2, 2))), ShapeError);
}

TEST_CASE("diff_loss matches triple loop and is symmetric") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const Index T = 1 + rep % 6, d = 1 + rep % 4;
    Tensor s = oracle::random(T, d, rng), h = oracle::random(T, d, rng);
    Tape t;
    const double got = diff_loss(t.constant(s), t.constant(h)).scalar();
    const double want = oracle::frobenius_sq_of_product(s, h);
    CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, want));
    CHECK(std::abs(diff_loss(t.constant(h), t.constant(s)).scalar() - got) <= 1e-12 * std::max(1.0, want));
    CHECK(got >= 0.0);
  }
}

TEST_CASE("diff_loss vanishes for orthogonal column spaces") {
  Tensor s = Tensor::Zero(4, 2), h = Tensor::Zero(4, 2);
  s(0, 0) = 1;
  s(1, 1) = 3;
  h(2, 0) = 2;
  h(3, 1) = -1;
  h(2, 1) = 5;
  Tape t;
  CHECK(diff_loss(t.constant(s), t.constant(h)).scalar() == 0.0);
}

TEST_CASE("total_loss composition") {
  Tape t;
  auto c = [&](double v) { return t.constant(column({v})); };
  CHECK(total_loss(c(1), c(2), c(3), LossWeights{0.5, 0.1, {}}).scalar() == doctest::Approx(2.3).epsilon(1e-15));
  CHECK(total_loss(c(1.25), c(2), c(3), LossWeights{0, 0, {}}).scalar() == 1.25);
  LossWeights defaults;
  CHECK(defaults.lambda == 0.05);
  CHECK(defaults.gamma == 0.01);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    const double a = u(rng), b = u(rng), d = u(rng), lambda = u(rng), gamma = u(rng);
    const double got = total_loss(c(a), c(b), c(d), LossWeights{lambda, gamma, {}}).scalar();
    CHECK(std::abs(got - (a + lambda * b + gamma * d)) <= 1e-12);
  }
}
