#pragma once

#include "aspmtl/tape.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>

namespace aspmtl {

template <typename Scalar>
using ParamMapT = std::map<std::string, TensorT<Scalar>>;
using ParamMap = ParamMapT<double>;

template <typename Scalar>
using VarMapT = std::map<std::string, BasicVar<Scalar>>;
using VarMap = VarMapT<double>;

// Builds a scalar loss from parameter leaves. Must be deterministic.
template <typename Scalar>
using LossBuilderT = std::function<BasicVar<Scalar>(BasicTape<Scalar>&, const VarMapT<Scalar>&)>;
using LossBuilder = LossBuilderT<double>;

struct FdOptions {
  double eps = 1e-5;
  // Denominator floor of the relative error, so that gradients that are zero
  // up to rounding do not divide by ~0.
  double floor = 1e-6;
  // Unset: analytic gradients come from an identity-mode tape (reversal nodes
  // pass gradients through unchanged) and are compared to finite differences
  // directly. Set to s: analytic gradients come from a reversing tape and are
  // compared against -s times the finite differences; valid when every path
  // from the parameters to the loss crosses exactly one reversal of scale s.
  std::optional<double> reversed_scale;
};

struct FdReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool nan_seen = false;
  std::size_t checked = 0;
};

template <typename Scalar>
GradientMapT<Scalar> analytic_gradients(const LossBuilderT<Scalar>& loss_fn, const ParamMapT<Scalar>& params,
                                        ReversalMode mode) {
  BasicTape<Scalar> tape(mode);
  VarMapT<Scalar> vars;
  for (const auto& [name, value] : params) vars.emplace(name, tape.parameter(name, value));
  return tape.backward(loss_fn(tape, vars));
}

template <typename Scalar>
Scalar evaluate_loss(const LossBuilderT<Scalar>& loss_fn, const ParamMapT<Scalar>& params) {
  BasicTape<Scalar> tape;
  VarMapT<Scalar> vars;
  for (const auto& [name, value] : params) vars.emplace(name, tape.constant_ref(value));
  return loss_fn(tape, vars).scalar();
}

// Central differences for every entry of every parameter, compared against
// backward(). Returns the worst relative error |a - n| / max(|a|, |n|, floor).
// Any NaN makes the check fail with an infinite error.
template <typename Scalar>
FdReport finite_difference_check(const LossBuilderT<Scalar>& loss_fn, ParamMapT<Scalar> params,
                                 const FdOptions& opts = {}) {
  const ReversalMode mode = opts.reversed_scale ? ReversalMode::Reverse : ReversalMode::Identity;
  const double factor = opts.reversed_scale ? -*opts.reversed_scale : 1.0;
  const auto analytic = analytic_gradients(loss_fn, params, mode);
  FdReport report;
  for (auto& [name, value] : params) {
    const auto& g = analytic.at(name);
    for (Index i = 0; i < value.size(); ++i) {
      Scalar& slot = value.data()[i];
      const Scalar saved = slot;
      slot = saved + Scalar(opts.eps);
      const Scalar up = evaluate_loss(loss_fn, params);
      slot = saved - Scalar(opts.eps);
      const Scalar down = evaluate_loss(loss_fn, params);
      slot = saved;
      const double numeric = factor * static_cast<double>(up - down) / (2.0 * opts.eps);
      const double a = static_cast<double>(g.data()[i]);
      double rel;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        report.nan_seen = true;
        rel = std::numeric_limits<double>::infinity();
      } else {
        rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
      }
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.max_rel_error) {
          report.worst_param = name;
          report.worst_index = i;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace aspmtl
