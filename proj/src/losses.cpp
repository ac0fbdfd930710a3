#include "aspmtl/losses.hpp"

#include "aspmtl/errors.hpp"

#include <cmath>
#include <string>

namespace aspmtl {

double LossWeights::alpha_for(std::size_t task) const {
  if (alpha.empty()) return 1.0;
  if (task >= alpha.size()) {
    throw ConfigError("loss weights: no alpha for task " + std::to_string(task) + " (" +
                      std::to_string(alpha.size()) + " given)");
  }
  return alpha[task];
}

void LossWeights::validate() const {
  auto check = [](double v, const std::string& name) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(name + " must be finite and >= 0, got " + std::to_string(v));
  };
  check(lambda, "lambda");
  check(gamma, "gamma");
  for (std::size_t k = 0; k < alpha.size(); ++k) check(alpha[k], "alpha[" + std::to_string(k) + "]");
}

Var cross_entropy(Var probs, const Tensor& onehot) {
  if (onehot.rows() != probs.rows() || onehot.cols() != 1) {
    throw ShapeError("cross_entropy: one-hot " + shape_string(onehot) + " vs probabilities " +
                     shape_string(probs.value()));
  }
  Index label = -1;
  for (Index j = 0; j < onehot.rows(); ++j) {
    if (onehot(j, 0) == 1.0) {
      if (label >= 0) throw InputError("cross_entropy: one-hot target has more than one 1");
      label = j;
    } else if (onehot(j, 0) != 0.0) {
      throw InputError("cross_entropy: one-hot target entries must be 0 or 1");
    }
  }
  if (label < 0) throw InputError("cross_entropy: one-hot target has no 1");
  return nll(probs, label);
}

Var cross_entropy(Var probs, Index label) { return nll(probs, label); }

Var cross_entropy(std::span<const Var> probs, std::span<const Index> labels) {
  if (probs.size() != labels.size()) throw ContractError("cross_entropy: probability/label count mismatch");
  if (probs.empty()) throw ContractError("cross_entropy: empty batch");
  std::vector<Var> terms;
  terms.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) terms.push_back(nll(probs[i], labels[i]));
  return mean(std::span<const Var>(terms));
}

Var task_loss(std::span<const std::pair<std::size_t, Var>> per_task, const LossWeights& weights) {
  if (per_task.empty()) throw ContractError("task_loss: no task losses");
  std::vector<Var> terms;
  std::vector<double> w;
  for (const auto& [task, loss] : per_task) {
    terms.push_back(loss);
    w.push_back(weights.alpha_for(task));
  }
  return weighted_sum(std::span<const Var>(terms), std::span<const double>(w));
}

Var adversarial_loss(Var shared_final, Index task, const HeadVars& disc, GradReversalSpec spec) {
  const Index k = disc.weight.rows();
  if (k < 2) throw ConfigError("adversarial_loss: needs at least 2 tasks, discriminator has " + std::to_string(k));
  if (task < 0 || task >= k) {
    throw InputError("adversarial_loss: task " + std::to_string(task) + " outside " + std::to_string(k) + " tasks");
  }
  Var reversed = gradient_reversal(shared_final, spec);
  return nll(softmax_classify(reversed, disc), task);
}

Var diff_loss(Var shared_states, Var private_states) {
  if (shared_states.cols() != private_states.cols() || shared_states.rows() != private_states.rows()) {
    throw ShapeError("diff_loss: shared " + shape_string(shared_states.value()) + " vs private " +
                     shape_string(private_states.value()));
  }
  return sum_squares(matmul(transpose(shared_states), private_states));
}

Var total_loss(Var l_task, std::optional<Var> l_adv, std::optional<Var> l_diff, const LossWeights& w) {
  std::vector<Var> terms{l_task};
  std::vector<double> weights{1.0};
  if (l_adv) {
    terms.push_back(*l_adv);
    weights.push_back(w.lambda);
  }
  if (l_diff) {
    terms.push_back(*l_diff);
    weights.push_back(w.gamma);
  }
  return weighted_sum(std::span<const Var>(terms), std::span<const double>(weights));
}

}  // namespace aspmtl
