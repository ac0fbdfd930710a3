#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A tape records every operation in execution order; node inputs always point
// at earlier nodes, so reverse recording order is a valid topological order
// for the backward sweep. Parameters enter as named leaves that reference
// caller-owned storage (no copy); backward() returns one gradient per
// registered parameter, zero-filled when the parameter did not reach the loss.
//
// A tape is single-use: record, call backward() once, then reset() or drop it.

#include "aspmtl/errors.hpp"
#include "aspmtl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace aspmtl {

template <typename Scalar>
class BasicTape;

template <typename Scalar>
struct BasicVar {
  BasicTape<Scalar>* tape = nullptr;
  int id = -1;

  const TensorT<Scalar>& value() const { return tape->value(id); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }
};

// Scale of a gradient-reversal node: identity forward, -scale backward.
struct GradReversalSpec {
  double scale = 1.0;
};

// Identity mode treats reversal nodes as plain identities in the backward
// sweep. Finite-difference checks of losses containing reversal nodes run in
// this mode, since finite differences only see the forward function.
enum class ReversalMode { Reverse, Identity };

enum class Axis { Rows, Cols };

template <typename Scalar>
using GradientMapT = std::map<std::string, TensorT<Scalar>>;

using GradientMap = GradientMapT<double>;

template <typename Scalar>
class BasicTape {
 public:
  using Matrix = TensorT<Scalar>;
  using Var = BasicVar<Scalar>;
  using BackwardFn = std::function<void(BasicTape&, int)>;

  explicit BasicTape(ReversalMode mode = ReversalMode::Reverse) : mode_(mode) {}

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  ReversalMode reversal_mode() const { return mode_; }

  Var constant(Matrix value) {
    Node n;
    n.kind = "constant";
    n.owned = std::move(value);
    return push(std::move(n));
  }

  // `value` must outlive the tape.
  Var constant_ref(const Matrix& value) {
    Node n;
    n.kind = "constant";
    n.external = &value;
    return push(std::move(n));
  }

  // Registers a named leaf. `value` must outlive the tape. Registering the
  // same name twice returns the original leaf.
  Var parameter(const std::string& name, const Matrix& value) {
    if (auto it = params_.find(name); it != params_.end()) return Var{this, it->second};
    Node n;
    n.kind = "parameter";
    n.external = &value;
    n.requires_grad = true;
    Var v = push(std::move(n));
    params_.emplace(name, v.id);
    return v;
  }

  // Temporaries are copied into the tape.
  Var parameter(const std::string& name, Matrix&& value) {
    if (auto it = params_.find(name); it != params_.end()) return Var{this, it->second};
    Node n;
    n.kind = "parameter";
    n.owned = std::move(value);
    n.requires_grad = true;
    Var v = push(std::move(n));
    params_.emplace(name, v.id);
    return v;
  }

  // Appends an operation node. `inputs` must reference existing nodes.
  Var record(const char* kind, Matrix value, std::initializer_list<int> inputs, BackwardFn fn) {
    return record(kind, std::move(value), std::span<const int>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var record(const char* kind, Matrix value, std::span<const int> inputs, BackwardFn fn) {
    Node n;
    n.kind = kind;
    n.owned = std::move(value);
    for (int in : inputs) {
      if (in < 0 || in >= static_cast<int>(nodes_.size())) {
        throw ContractError(std::string(kind) + ": input node id out of range");
      }
      if (nodes_[in].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Matrix& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Upstream gradient of a node during the backward sweep.
  const Matrix& grad(int id) const { return nodes_[id].grad; }

  // Accumulation target for the gradient of `id`, zero-initialized on first
  // touch. Multiple consumers of one node sum into the same buffer.
  Matrix& grad_slot(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      const Matrix& v = value(id);
      n.grad = Matrix::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }
  const char* kind(int id) const { return nodes_[id].kind; }
  const std::map<std::string, int>& parameters() const { return params_; }

  // Count of cross-entropy evaluations whose probability hit the log clamp.
  std::size_t clamp_count() const { return clamp_count_; }
  void note_clamp() { ++clamp_count_; }

  GradientMapT<Scalar> backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: loss node belongs to another tape");
    const Matrix& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward: loss must be scalar, got " + shape_string(lv));
    }
    grad_slot(loss.id)(0, 0) = Scalar(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
    GradientMapT<Scalar> out;
    for (const auto& [name, id] : params_) {
      const Matrix& g = nodes_[id].grad;
      if (g.size() == 0) {
        out.emplace(name, Matrix::Zero(value(id).rows(), value(id).cols()));
      } else {
        out.emplace(name, g);
      }
    }
    return out;
  }

  void reset() {
    nodes_.clear();
    params_.clear();
    clamp_count_ = 0;
  }

 private:
  struct Node {
    const char* kind = "";
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  ReversalMode mode_;
  std::vector<Node> nodes_;
  std::map<std::string, int> params_;
  std::size_t clamp_count_ = 0;
};

using Tape = BasicTape<double>;
using Var = BasicVar<double>;

namespace detail {

template <typename Scalar>
void require_same_tape(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw ContractError(std::string(op) + ": operands recorded on different tapes");
  }
}

template <typename Scalar>
void require_same_shape(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.value()) + " vs " +
                     shape_string(b.value()));
  }
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace detail

template <typename Scalar>
BasicVar<Scalar> matmul(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  detail::require_same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_string(a.value()) + " x " +
                     shape_string(b.value()));
  }
  auto* t = a.tape;
  TensorT<Scalar> out = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return t->record("matmul", std::move(out), {ia, ib}, [ia, ib](BasicTape<Scalar>& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad_slot(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.requires_grad(ib)) tp.grad_slot(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

template <typename Scalar>
BasicVar<Scalar> add(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  detail::require_same_tape(a, b, "add");
  detail::require_same_shape(a, b, "add");
  TensorT<Scalar> out = a.value() + b.value();
  const int ia = a.id, ib = b.id;
  return a.tape->record("add", std::move(out), {ia, ib}, [ia, ib](BasicTape<Scalar>& tp, int self) {
    if (tp.requires_grad(ia)) tp.grad_slot(ia) += tp.grad(self);
    if (tp.requires_grad(ib)) tp.grad_slot(ib) += tp.grad(self);
  });
}

// Adds a bias vector [n x 1] to every row of m [r x n]. The only broadcast
// the tape supports.
template <typename Scalar>
BasicVar<Scalar> add_bias(BasicVar<Scalar> m, BasicVar<Scalar> bias) {
  detail::require_same_tape(m, bias, "add_bias");
  if (bias.cols() != 1 || bias.rows() != m.cols()) {
    throw ShapeError("add_bias: bias " + shape_string(bias.value()) + " does not fit rows of " +
                     shape_string(m.value()));
  }
  TensorT<Scalar> out = m.value().rowwise() + bias.value().col(0).transpose();
  const int im = m.id, ib = bias.id;
  return m.tape->record("add_bias", std::move(out), {im, ib}, [im, ib](BasicTape<Scalar>& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(im)) tp.grad_slot(im) += g;
    if (tp.requires_grad(ib)) tp.grad_slot(ib).col(0) += g.colwise().sum().transpose();
  });
}

// Elementwise product.
template <typename Scalar>
BasicVar<Scalar> mul(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  detail::require_same_tape(a, b, "mul");
  detail::require_same_shape(a, b, "mul");
  TensorT<Scalar> out = a.value().cwiseProduct(b.value());
  const int ia = a.id, ib = b.id;
  return a.tape->record("mul", std::move(out), {ia, ib}, [ia, ib](BasicTape<Scalar>& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad_slot(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.requires_grad(ib)) tp.grad_slot(ib) += g.cwiseProduct(tp.value(ia));
  });
}

template <typename Scalar>
BasicVar<Scalar> scale(BasicVar<Scalar> a, Scalar factor) {
  TensorT<Scalar> out = a.value() * factor;
  const int ia = a.id;
  return a.tape->record("scale", std::move(out), {ia}, [ia, factor](BasicTape<Scalar>& tp, int self) {
    tp.grad_slot(ia) += tp.grad(self) * factor;
  });
}

template <typename Scalar>
BasicVar<Scalar> sigmoid(BasicVar<Scalar> a) {
  TensorT<Scalar> out = a.value().unaryExpr([](Scalar x) { return detail::sigmoid(x); });
  const int ia = a.id;
  return a.tape->record("sigmoid", std::move(out), {ia}, [ia](BasicTape<Scalar>& tp, int self) {
    const auto& y = tp.value(self);
    tp.grad_slot(ia) += tp.grad(self).cwiseProduct(y.cwiseProduct((Scalar(1) - y.array()).matrix()));
  });
}

template <typename Scalar>
BasicVar<Scalar> tanh(BasicVar<Scalar> a) {
  TensorT<Scalar> out = a.value().array().tanh().matrix();
  const int ia = a.id;
  return a.tape->record("tanh", std::move(out), {ia}, [ia](BasicTape<Scalar>& tp, int self) {
    const auto& y = tp.value(self);
    tp.grad_slot(ia) += tp.grad(self).cwiseProduct((Scalar(1) - y.array().square()).matrix());
  });
}

// Concatenation along `axis`: Rows stacks vertically, Cols side by side.
template <typename Scalar>
BasicVar<Scalar> concat(std::span<const BasicVar<Scalar>> parts, Axis axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  auto* t = parts.front().tape;
  Index rows = 0, cols = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p, "concat");
    ids.push_back(p.id);
    if (axis == Axis::Rows) {
      if (p.cols() != parts.front().cols()) {
        throw ShapeError("concat: column mismatch " + shape_string(parts.front().value()) + " vs " +
                         shape_string(p.value()));
      }
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts.front().rows()) {
        throw ShapeError("concat: row mismatch " + shape_string(parts.front().value()) + " vs " +
                         shape_string(p.value()));
      }
      cols += p.cols();
      rows = p.rows();
    }
  }
  TensorT<Scalar> out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    if (axis == Axis::Rows) {
      out.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      out.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
  }
  return t->record("concat", std::move(out), ids, [ids, axis](BasicTape<Scalar>& tp, int self) {
    const auto& g = tp.grad(self);
    Index off = 0;
    for (int id : ids) {
      const auto& v = tp.value(id);
      if (axis == Axis::Rows) {
        if (tp.requires_grad(id)) tp.grad_slot(id) += g.middleRows(off, v.rows());
        off += v.rows();
      } else {
        if (tp.requires_grad(id)) tp.grad_slot(id) += g.middleCols(off, v.cols());
        off += v.cols();
      }
    }
  });
}

template <typename Scalar>
BasicVar<Scalar> concat(std::initializer_list<BasicVar<Scalar>> parts, Axis axis = Axis::Rows) {
  return concat(std::span<const BasicVar<Scalar>>(parts.begin(), parts.size()), axis);
}

template <typename Scalar>
BasicVar<Scalar> slice_rows(BasicVar<Scalar> a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + shape_string(a.value()));
  }
  TensorT<Scalar> out = a.value().middleRows(start, count);
  const int ia = a.id;
  return a.tape->record("slice_rows", std::move(out), {ia}, [ia, start, count](BasicTape<Scalar>& tp, int self) {
    tp.grad_slot(ia).middleRows(start, count) += tp.grad(self);
  });
}

// Row `r` of a matrix as a column vector.
template <typename Scalar>
BasicVar<Scalar> row(BasicVar<Scalar> a, Index r) {
  if (r < 0 || r >= a.rows()) throw ShapeError("row: index out of range for " + shape_string(a.value()));
  TensorT<Scalar> out = a.value().row(r).transpose();
  const int ia = a.id;
  return a.tape->record("row", std::move(out), {ia}, [ia, r](BasicTape<Scalar>& tp, int self) {
    tp.grad_slot(ia).row(r) += tp.grad(self).col(0).transpose();
  });
}

template <typename Scalar>
BasicVar<Scalar> transpose(BasicVar<Scalar> a) {
  TensorT<Scalar> out = a.value().transpose();
  const int ia = a.id;
  return a.tape->record("transpose", std::move(out), {ia}, [ia](BasicTape<Scalar>& tp, int self) {
    tp.grad_slot(ia) += tp.grad(self).transpose();
  });
}

template <typename Scalar>
BasicVar<Scalar> sum(BasicVar<Scalar> a) {
  TensorT<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id;
  return a.tape->record("sum", std::move(out), {ia}, [ia](BasicTape<Scalar>& tp, int self) {
    tp.grad_slot(ia).array() += tp.grad(self)(0, 0);
  });
}

// Squared Frobenius norm.
template <typename Scalar>
BasicVar<Scalar> sum_squares(BasicVar<Scalar> a) {
  TensorT<Scalar> out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  const int ia = a.id;
  return a.tape->record("sum_squares", std::move(out), {ia}, [ia](BasicTape<Scalar>& tp, int self) {
    tp.grad_slot(ia) += (Scalar(2) * tp.grad(self)(0, 0)) * tp.value(ia);
  });
}

// sum_i weights[i] * terms[i] over scalar nodes.
template <typename Scalar>
BasicVar<Scalar> weighted_sum(std::span<const BasicVar<Scalar>> terms, std::span<const Scalar> weights) {
  if (terms.empty()) throw ContractError("weighted_sum: no terms");
  if (terms.size() != weights.size()) throw ContractError("weighted_sum: term/weight count mismatch");
  std::vector<int> ids;
  std::vector<Scalar> w(weights.begin(), weights.end());
  Scalar total = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    detail::require_same_tape(terms.front(), terms[i], "weighted_sum");
    if (terms[i].rows() != 1 || terms[i].cols() != 1) {
      throw ShapeError("weighted_sum: term " + std::to_string(i) + " is not scalar");
    }
    total += w[i] * terms[i].scalar();
    ids.push_back(terms[i].id);
  }
  TensorT<Scalar> out(1, 1);
  out(0, 0) = total;
  return terms.front().tape->record("weighted_sum", std::move(out), ids,
                                    [ids, w](BasicTape<Scalar>& tp, int self) {
                                      const Scalar g = tp.grad(self)(0, 0);
                                      for (std::size_t i = 0; i < ids.size(); ++i) {
                                        if (tp.requires_grad(ids[i])) tp.grad_slot(ids[i])(0, 0) += w[i] * g;
                                      }
                                    });
}

// Mean of scalar nodes.
template <typename Scalar>
BasicVar<Scalar> mean(std::span<const BasicVar<Scalar>> terms) {
  std::vector<Scalar> w(terms.size(), terms.empty() ? Scalar(0) : Scalar(1) / Scalar(terms.size()));
  return weighted_sum(terms, std::span<const Scalar>(w));
}

// Softmax over a column vector, stabilized by subtracting the max logit.
template <typename Scalar>
BasicVar<Scalar> softmax(BasicVar<Scalar> logits) {
  if (logits.cols() != 1) throw ShapeError("softmax: expected column vector, got " + shape_string(logits.value()));
  const auto& z = logits.value();
  TensorT<Scalar> out = (z.array() - z.maxCoeff()).exp().matrix();
  out /= out.sum();
  const int ia = logits.id;
  return logits.tape->record("softmax", std::move(out), {ia}, [ia](BasicTape<Scalar>& tp, int self) {
    const auto& p = tp.value(self);
    const auto& g = tp.grad(self);
    const Scalar dot = (g.array() * p.array()).sum();
    tp.grad_slot(ia) += (p.array() * (g.array() - dot)).matrix();
  });
}

inline constexpr double kLogClamp = 1e-12;

// -log(probs[label]) with the probability clamped at 1e-12. Clamped
// evaluations are counted on the tape and pass no gradient.
template <typename Scalar>
BasicVar<Scalar> nll(BasicVar<Scalar> probs, Index label) {
  if (probs.cols() != 1) throw ShapeError("nll: expected column vector, got " + shape_string(probs.value()));
  if (label < 0 || label >= probs.rows()) {
    throw InputError("nll: label " + std::to_string(label) + " outside " + std::to_string(probs.rows()) + " classes");
  }
  const Scalar p = probs.value()(label, 0);
  const bool clamped = !(p > Scalar(kLogClamp));
  if (clamped) probs.tape->note_clamp();
  TensorT<Scalar> out(1, 1);
  out(0, 0) = -std::log(clamped ? Scalar(kLogClamp) : p);
  const int ia = probs.id;
  return probs.tape->record("nll", std::move(out), {ia}, [ia, label, clamped](BasicTape<Scalar>& tp, int self) {
    if (clamped) return;
    tp.grad_slot(ia)(label, 0) -= tp.grad(self)(0, 0) / tp.value(ia)(label, 0);
  });
}

// Forward: bitwise copy of x. Backward: upstream gradient times -scale
// (plain identity when the tape runs in ReversalMode::Identity).
template <typename Scalar>
BasicVar<Scalar> gradient_reversal(BasicVar<Scalar> x, GradReversalSpec spec) {
  if (!(spec.scale >= 0.0) || !std::isfinite(spec.scale)) {
    throw ConfigError("gradient_reversal: scale must be finite and >= 0, got " + std::to_string(spec.scale));
  }
  TensorT<Scalar> out = x.value();
  const int ix = x.id;
  const Scalar factor = -static_cast<Scalar>(spec.scale);
  return x.tape->record("gradient_reversal", std::move(out), {ix}, [ix, factor](BasicTape<Scalar>& tp, int self) {
    if (tp.reversal_mode() == ReversalMode::Identity) {
      tp.grad_slot(ix) += tp.grad(self);
    } else {
      tp.grad_slot(ix) += factor * tp.grad(self);
    }
  });
}

// Gathers rows of `table` [V x e] into a [T x e] matrix. Row ids must be < V.
template <typename Scalar>
BasicVar<Scalar> lookup(BasicVar<Scalar> table, std::span<const int> ids) {
  const Index vocab = table.rows();
  TensorT<Scalar> out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= vocab) {
      throw InputError("lookup: token id " + std::to_string(ids[t]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    out.row(static_cast<Index>(t)) = table.value().row(ids[t]);
  }
  const int it = table.id;
  std::vector<int> rows(ids.begin(), ids.end());
  return table.tape->record("lookup", std::move(out), {it}, [it, rows](BasicTape<Scalar>& tp, int self) {
    auto& g = tp.grad_slot(it);
    const auto& up = tp.grad(self);
    for (std::size_t t = 0; t < rows.size(); ++t) g.row(rows[t]) += up.row(static_cast<Index>(t));
  });
}

// Stacks rows [offset, offset+len) of each column-vector node into a
// [parts.size() x len] matrix; row t comes from parts[t].
template <typename Scalar>
BasicVar<Scalar> stack_rows(std::span<const BasicVar<Scalar>> parts, Index offset, Index len) {
  if (parts.empty()) throw ShapeError("stack_rows: no operands");
  TensorT<Scalar> out(static_cast<Index>(parts.size()), len);
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (std::size_t t = 0; t < parts.size(); ++t) {
    const auto& v = parts[t].value();
    if (v.cols() != 1 || offset + len > v.rows()) {
      throw ShapeError("stack_rows: part " + shape_string(v) + " cannot supply rows [" + std::to_string(offset) +
                       ", " + std::to_string(offset + len) + ")");
    }
    out.row(static_cast<Index>(t)) = v.col(0).segment(offset, len).transpose();
    ids.push_back(parts[t].id);
  }
  return parts.front().tape->record("stack_rows", std::move(out), ids,
                                    [ids, offset, len](BasicTape<Scalar>& tp, int self) {
                                      const auto& g = tp.grad(self);
                                      for (std::size_t t = 0; t < ids.size(); ++t) {
                                        if (!tp.requires_grad(ids[t])) continue;
                                        tp.grad_slot(ids[t]).col(0).segment(offset, len) +=
                                            g.row(static_cast<Index>(t)).transpose();
                                      }
                                    });
}

}  // namespace aspmtl
