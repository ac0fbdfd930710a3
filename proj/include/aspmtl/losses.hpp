#pragma once

#include "aspmtl/nn.hpp"
#include "aspmtl/tape.hpp"

#include <optional>
#include <span>
#include <vector>

namespace aspmtl {

struct LossWeights {
  double lambda = 0.05;        // adversarial weight
  double gamma = 0.01;         // orthogonality weight
  std::vector<double> alpha;   // per-task weights; empty means 1 for every task

  double alpha_for(std::size_t task) const;
  void validate() const;
};

// -sum_j onehot_j log(probs_j), log clamped at 1e-12.
Var cross_entropy(Var probs, const Tensor& onehot);
Var cross_entropy(Var probs, Index label);

// Mean of per-sample cross-entropies.
Var cross_entropy(std::span<const Var> probs, std::span<const Index> labels);

// sum_k alpha_k * per_task[k]. `per_task` holds (task index, loss) pairs.
Var task_loss(std::span<const std::pair<std::size_t, Var>> per_task, const LossWeights& weights);

// Discriminator cross-entropy of the task label given the shared final state.
// The state is routed through a reversal node of `spec` before the
// discriminator, so minimizing this loss trains the discriminator toward the
// right task while the encoder upstream ascends it.
Var adversarial_loss(Var shared_final, Index task, const HeadVars& disc, GradReversalSpec spec);

// ||S^T H||_F^2 for S [T_s x d], H [T_h x d]; rows must match too, since
// S^T H pairs timesteps.
Var diff_loss(Var shared_states, Var private_states);

// l_task + lambda * l_adv + gamma * l_diff; absent terms contribute nothing.
Var total_loss(Var l_task, std::optional<Var> l_adv, std::optional<Var> l_diff, const LossWeights& w);

}  // namespace aspmtl
