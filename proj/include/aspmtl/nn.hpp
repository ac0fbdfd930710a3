#pragma once

#include "aspmtl/tape.hpp"
#include "aspmtl/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace aspmtl {

// Row blocks of the LSTM affine map, each `hidden` rows tall, in this order:
// candidate cell (tanh), output gate, input gate, forget gate. The input
// columns are [x_t ; h_{t-1}]: the first `input` columns read the token
// embedding, the remaining `hidden` columns read the previous hidden state.
enum class GateBlock : int { Candidate = 0, Output = 1, Input = 2, Forget = 3 };

struct LstmParams {
  Tensor weight;  // [4d x (e + d)]
  Tensor bias;    // [4d x 1]

  Index hidden() const { return weight.rows() / 4; }
  Index input() const { return weight.cols() - hidden(); }

  static LstmParams zeros(Index hidden, Index input);
  void validate(const std::string& what) const;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

struct SoftmaxHead {
  Tensor weight;  // [C x d_in]
  Tensor bias;    // [C x 1]

  Index classes() const { return weight.rows(); }
  Index input_width() const { return weight.cols(); }

  static SoftmaxHead zeros(Index classes, Index input_width);
};

struct EmbeddingTable {
  Tensor matrix;  // [V x e]
  bool trainable = true;

  Index vocab_size() const { return matrix.rows(); }
  Index dim() const { return matrix.cols(); }
};

// One LSTM update on plain tensors.
LstmState lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev, const LstmParams& p);

struct EncodeResult {
  Tensor final_h;  // [d x 1]
  Tensor all_h;    // [T x d], row t is h_{t+1}
};

// Folds lstm_step over the rows of `inputs` [T x e] from `init` (zeros when
// absent). Throws InputError on an empty sequence.
EncodeResult lstm_encode(const Tensor& inputs, const LstmParams& p, const LstmState* init = nullptr);

// Probability vector softmax(W h + b), max-subtracted before exponentiation.
Tensor softmax_classify(const Tensor& h, const SoftmaxHead& head);

// -- tape versions -----------------------------------------------------------

struct LstmVars {
  Var weight;
  Var bias;
  Index hidden() const { return weight.rows() / 4; }
  Index input() const { return weight.cols() - hidden(); }
};

struct HeadVars {
  Var weight;
  Var bias;
};

// Fused LSTM update reading row `t` of `inputs` [T x e]. `state` and the
// result are stacked [h ; c] column vectors of height 2d.
Var lstm_cell(Var inputs, Index t, Var state, const LstmVars& p);

// The same update composed from primitive tape ops. Slower; kept as an
// independent route for checking lstm_cell.
std::pair<Var, Var> lstm_step_graph(Var x, Var h_prev, Var c_prev, const LstmVars& p);

struct EncodedSequence {
  std::vector<Var> states;  // stacked [h ; c] per timestep
  Var final_h;              // [d x 1]
  Index hidden = 0;

  // [T x d] matrix of hidden states; records a node on first call.
  Var hidden_matrix();

 private:
  std::optional<Var> all_h_;
};

EncodedSequence lstm_encode(Var inputs, const LstmVars& p, std::optional<Var> init_state = std::nullopt);

Var softmax_classify(Var h, const HeadVars& head);

// -- initialization ------------------------------------------------------------

inline constexpr double kInitRange = 0.1;

// Fills a tensor with i.i.d. draws from U[-range, range].
Tensor uniform_tensor(Index rows, Index cols, std::mt19937_64& rng, double range = kInitRange);

LstmParams init_lstm(Index hidden, Index input, std::mt19937_64& rng);
SoftmaxHead init_head(Index classes, Index input_width, std::mt19937_64& rng);
EmbeddingTable init_embeddings(Index vocab_size, Index dim, std::mt19937_64& rng);

// Reads pretrained vectors in the plain text layout (`token v1 ... ve` per
// line) into rows of `table` for tokens present in `vocab`; other lines are
// skipped. Returns the number of rows overwritten.
std::size_t load_embeddings(std::istream& in, const std::unordered_map<std::string, int>& vocab,
                            EmbeddingTable& table);
std::size_t load_embeddings(const std::string& path, const std::unordered_map<std::string, int>& vocab,
                            EmbeddingTable& table);

}  // namespace aspmtl
