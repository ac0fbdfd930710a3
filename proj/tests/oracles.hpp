#pragma once

// Independent scalar-loop references used as test oracles. They share no code
// with the library beyond the Tensor type.

#include "aspmtl/tensor.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using aspmtl::Index;
using aspmtl::Tensor;

inline Tensor random(Index r, Index c, std::mt19937_64& rng, double range = 1.0) {
  std::uniform_real_distribution<double> u(-range, range);
  Tensor t(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) t(i, j) = u(rng);
  return t;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One LSTM step written out gate by gate. W rows: candidate, output, input,
// forget blocks of d rows each; columns: x (e) then h_prev (d).
struct Step {
  std::vector<double> h, c;
};

inline Step lstm_step(const std::vector<double>& x, const std::vector<double>& h, const std::vector<double>& c,
                      const Tensor& W, const Tensor& b) {
  const std::size_t d = h.size(), e = x.size();
  auto pre = [&](std::size_t r) {
    double s = b(static_cast<Index>(r), 0);
    for (std::size_t j = 0; j < e; ++j) s += W(static_cast<Index>(r), static_cast<Index>(j)) * x[j];
    for (std::size_t j = 0; j < d; ++j) s += W(static_cast<Index>(r), static_cast<Index>(e + j)) * h[j];
    return s;
  };
  Step out{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t u = 0; u < d; ++u) {
    const double cand = std::tanh(pre(u));
    const double o = sigmoid(pre(d + u));
    const double i = sigmoid(pre(2 * d + u));
    const double f = sigmoid(pre(3 * d + u));
    out.c[u] = cand * i + c[u] * f;
    out.h[u] = o * std::tanh(out.c[u]);
  }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i]));
  for (auto& v : p) v /= z;
  return p;
}

inline std::vector<double> affine_softmax(const Tensor& W, const Tensor& b, const std::vector<double>& h) {
  std::vector<double> logits(static_cast<std::size_t>(W.rows()));
  for (Index i = 0; i < W.rows(); ++i) {
    double s = b(i, 0);
    for (Index j = 0; j < W.cols(); ++j) s += W(i, j) * h[static_cast<std::size_t>(j)];
    logits[static_cast<std::size_t>(i)] = s;
  }
  return softmax(logits);
}

// sum_ij (S^T H)_ij^2 by explicit triple loop
inline double frobenius_sq_of_product(const Tensor& S, const Tensor& H) {
  double total = 0.0;
  for (Index i = 0; i < S.cols(); ++i)
    for (Index j = 0; j < H.cols(); ++j) {
      double s = 0.0;
      for (Index t = 0; t < S.rows(); ++t) s += S(t, i) * H(t, j);
      total += s * s;
    }
  return total;
}

inline std::vector<double> col(const Tensor& t) {
  std::vector<double> v(static_cast<std::size_t>(t.rows()));
  for (Index i = 0; i < t.rows(); ++i) v[static_cast<std::size_t>(i)] = t(i, 0);
  return v;
}

}  // namespace oracle
