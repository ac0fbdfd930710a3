#pragma once

#include "aspmtl/nn.hpp"
#include "aspmtl/tape.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace aspmtl {

// FS: one shared encoder. SP: shared plus one private encoder per task.
// ASP: SP plus a task discriminator and the orthogonality penalty.
enum class Scheme { FullyShared, SharedPrivate, Adversarial };

enum class TransferMode { SingleChannel, BiChannel };

std::string to_string(Scheme s);
std::string to_string(TransferMode m);
Scheme parse_scheme(const std::string& text);
TransferMode parse_transfer_mode(const std::string& text);

struct ModelConfig {
  Scheme scheme = Scheme::Adversarial;
  Index hidden = 16;
  Index embed = 16;
  Index vocab = 2;
  std::vector<Index> classes;  // per task
  // Set for transfer models: the shared encoder is frozen.
  std::optional<TransferMode> transfer;

  std::size_t tasks() const { return classes.size(); }
  bool has_private() const { return scheme != Scheme::FullyShared; }
  bool has_discriminator() const { return scheme == Scheme::Adversarial; }
  bool shared_frozen() const { return transfer.has_value(); }
  Index feature_width() const { return has_private() ? 2 * hidden : hidden; }
  void validate() const;
};

struct ModelParams {
  EmbeddingTable embeddings;
  LstmParams shared;
  std::vector<LstmParams> priv;        // one per task, empty for FS
  std::vector<SoftmaxHead> heads;      // one per task
  std::optional<SoftmaxHead> disc;     // [K x d], ASP only
};

struct Model {
  ModelConfig config;
  ModelParams params;
};

// Every parameter tensor drawn from U[-0.1, 0.1].
Model init_model(const ModelConfig& config, std::uint64_t seed);
Model zero_model(const ModelConfig& config);

struct ParamRef {
  std::string name;
  Tensor* value;
  bool trainable;
};

// Parameter tensors in a fixed order with stable names:
// embedding, shared.weight, shared.bias, private.<k>.{weight,bias},
// head.<k>.{weight,bias}, disc.weight, disc.bias.
std::vector<ParamRef> named_parameters(Model& model);
std::vector<std::pair<std::string, const Tensor*>> named_parameters(const Model& model);

// Total number of LSTM parameter sets (shared + private).
std::size_t lstm_count(const Model& model);

// -- tape forward ------------------------------------------------------------

struct ModelVars {
  Var embeddings;
  LstmVars shared;
  std::vector<LstmVars> priv;
  std::vector<HeadVars> heads;
  std::optional<HeadVars> disc;
};

// Registers trainable tensors as named parameters and frozen ones as
// constants. `model` must outlive the tape.
ModelVars bind(Tape& tape, const Model& model);

struct ForwardVars {
  Var class_probs;
  std::optional<Var> disc_probs;
  EncodedSequence shared;
  std::optional<EncodedSequence> priv;
  Var feature;
};

struct ForwardOptions {
  bool classify = true;
  bool discriminate = false;   // only honored for ASP
  GradReversalSpec reversal{};
};

ForwardVars forward(const ModelVars& vars, const Model& model, std::span<const int> tokens, std::size_t task,
                    const ForwardOptions& opts = {});

// -- value forward ---------------------------------------------------------------

struct ForwardResult {
  Tensor class_probs;
  std::optional<Tensor> disc_probs;  // ASP only
  Tensor shared_states;              // S [T x d]
  std::optional<Tensor> private_states;  // H [T x d], absent for FS
  Tensor shared_final;               // s_T
  std::optional<Tensor> private_final;   // h_T
};

ForwardResult forward(const Model& model, std::span<const int> tokens, std::size_t task);

// softmax(b + U s_T) over the K tasks.
Tensor discriminate(const Tensor& shared_final, const SoftmaxHead& disc);

// Final shared state only (no private encoder or head work).
Tensor shared_features(const Model& model, std::span<const int> tokens);

// Predicted class, ties toward the lowest index.
Index predict(const Model& model, std::span<const int> tokens, std::size_t task);

// SC: frozen shared encoder then a fresh head over d features. BC: frozen
// shared encoder beside a fresh trainable encoder, head over 2d features.
// The embedding table is copied from the source and stays trainable.
Model build_transfer(const Model& source, TransferMode mode, Index classes, std::uint64_t seed);

struct ActivationRecord {
  Index t = 0;
  int token = 0;
  Tensor shared_h;                  // [d x 1]
  std::optional<Tensor> private_h;  // [d x 1]
  Tensor class_probs;               // head applied to the state at step t
};

std::vector<ActivationRecord> dump_activations(const Model& model, std::span<const int> tokens, std::size_t task);

}  // namespace aspmtl
