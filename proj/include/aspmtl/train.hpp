#pragma once

#include "aspmtl/data.hpp"
#include "aspmtl/gradcheck.hpp"
#include "aspmtl/losses.hpp"
#include "aspmtl/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace aspmtl {

// Rows of the orthogonality penalty: timesteps of one sentence (summed per
// sentence, then averaged over the batch) or final states across the batch.
enum class DiffMode { PerSentence, PerBatch };

std::string to_string(DiffMode m);
DiffMode parse_diff_mode(const std::string& text);

struct EpochRecord;

struct TrainConfig {
  double learning_rate = 0.01;
  double lambda = 0.05;
  double gamma = 0.01;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double clip_norm = 5.0;  // global gradient norm; infinity disables clipping
  std::uint64_t seed = 1;
  std::vector<double> alpha;  // per-task weights, empty = all 1
  bool use_unlabeled = false;
  std::size_t unlabeled_ratio = 1;
  DiffMode diff_mode = DiffMode::PerSentence;
  // Update the discriminator first, then the rest with fresh gradients,
  // instead of one joint step.
  bool alternating = false;
  // Called after every epoch with its record and the current parameters.
  std::function<void(const EpochRecord&, const Model&)> on_epoch;

  LossWeights weights() const { return LossWeights{lambda, gamma, alpha}; }
  void validate() const;
};

struct TaskEpoch {
  double train_loss = 0.0;
  double dev_error = 0.0;
  double disc_acc = std::numeric_limits<double>::quiet_NaN();  // ASP only
  double l_adv = std::numeric_limits<double>::quiet_NaN();
  double l_diff = std::numeric_limits<double>::quiet_NaN();
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<TaskEpoch> tasks;
  double mean_dev_error = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  // Header: epoch,task,train_loss,dev_error,disc_acc,l_adv,l_diff
  // Values print with 17 significant digits; missing metrics print "nan".
  void write_csv(std::ostream& out, const std::vector<std::string>& task_names) const;
};

struct TrainResult {
  Model model;  // best-dev parameters
  TrainHistory history;
  bool diverged = false;
  std::string divergence;
};

// Named-parameter view of a model as plain tensors; trainable only.
std::vector<ParamRef> trainable_parameters(Model& model);

// Global-norm clipping to `clip_norm`, then p <- p - lr * g for every
// trainable parameter. Parameters without a gradient entry are left alone.
// Throws DivergenceError naming a parameter with a non-finite gradient.
// Returns the global norm before clipping.
double sgd_step(std::span<const ParamRef> params, const GradientMap& grads, double lr, double clip_norm);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<const ParamRef> params, const GradientMap& grads) = 0;
};

class SgdOptimizer final : public Optimizer {
 public:
  SgdOptimizer(double lr, double clip_norm) : lr_(lr), clip_(clip_norm) {}
  void step(std::span<const ParamRef> params, const GradientMap& grads) override;

 private:
  double lr_, clip_;
};

struct BatchParts {
  double task = std::numeric_limits<double>::quiet_NaN();
  double adv = std::numeric_limits<double>::quiet_NaN();
  double diff = std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
};

// ModelVars from a name -> Var map (names as in named_parameters); used by
// finite-difference checks, where the checker owns the leaves.
ModelVars bind_named(const VarMap& vars, const Model& model);

// Total objective for one batch: labeled batches give
// alpha_k * CE + lambda * L_adv + gamma * L_diff (adversarial and diff terms
// for ASP only); unlabeled batches give lambda * L_adv.
Var batch_loss(const ModelVars& vars, const Model& model, const Batch& batch, const TrainConfig& cfg,
               BatchParts* parts = nullptr);

GradientMap batch_gradients(const Model& model, const Batch& batch, const TrainConfig& cfg,
                            ReversalMode mode = ReversalMode::Reverse, BatchParts* parts = nullptr);

// One optimization step on `model`. Returns the loss parts.
BatchParts train_step(Model& model, const Batch& batch, const TrainConfig& cfg, Optimizer& opt);

// Fraction of argmax-misclassified examples. Throws InputError when empty.
double evaluate(const Model& model, std::span<const Sample> samples, std::size_t task);

// Discriminator accuracy on the shared final states of `samples` of `task`.
double discriminator_accuracy(const Model& model, std::span<const Sample> samples, std::size_t task);

// Joint multi-task training. Tasks are visited round-robin, one batch per
// step; an epoch is K times the batch count of the largest task. Early stops
// on the mean dev error and returns the best-dev parameters.
TrainResult train_multitask(Model model, const std::vector<EncodedTask>& data, const TrainConfig& cfg);

struct GridCell {
  TrainConfig config;
  double mean_dev_error = std::numeric_limits<double>::infinity();
  bool diverged = false;
};

struct Grid {
  std::vector<double> learning_rates;
  std::vector<double> lambdas;
  std::vector<double> gammas;
};

struct GridResult {
  std::vector<GridCell> cells;  // lr-major, then lambda, then gamma
  std::size_t best = 0;
};

using ModelFactory = std::function<Model(const TrainConfig&)>;

// One training run per cell; the cell with the lowest mean dev error wins
// (first cell on ties). Diverged cells score +infinity. Up to `jobs` cells
// train concurrently; `factory` must then be safe to call from several
// threads. Results do not depend on `jobs`.
GridResult grid_search(const ModelFactory& factory, const std::vector<EncodedTask>& data, const TrainConfig& base,
                       const Grid& grid, std::size_t jobs = 1);

struct TransferResult {
  Model model;
  TrainHistory history;
  double dev_error = 0.0;
  double test_error = 0.0;
};

// Builds an SC/BC model around the frozen shared encoder of `source` and
// trains the remaining parameters on `target`.
TransferResult train_transfer(const Model& source, const EncodedTask& target, TransferMode mode,
                              const TrainConfig& cfg);

// -- analysis --------------------------------------------------------------------

struct ProbeOptions {
  std::size_t iterations = 1000;
  double learning_rate = 0.5;
};

// Fits a fresh softmax task classifier on standardized frozen shared final
// states of every task's train split (full-batch gradient descent on the
// convex cross-entropy) and reports its accuracy on the dev splits.
double probe_accuracy(const Model& model, const std::vector<EncodedTask>& data, const ProbeOptions& opts = {});

// Mean |cos(s_T, h_T)| between shared and private final states over a split.
double mean_abs_cosine(const Model& model, const std::vector<EncodedTask>& data, Split split);

}  // namespace aspmtl
