#include "aspmtl/nn.hpp"

#include "aspmtl/errors.hpp"

#include <fstream>
#include <istream>
#include <sstream>

namespace aspmtl {

namespace {

double sigmoid(double x) { return detail::sigmoid(x); }

struct Gates {
  Tensor candidate, output, input, forget;
};

Gates compute_gates(const Tensor& weight, const Tensor& bias, const Tensor& x, const Tensor& h_prev) {
  const Index d = h_prev.rows();
  const Index e = x.rows();
  Tensor z = bias;
  z.noalias() += weight.leftCols(e) * x;
  z.noalias() += weight.rightCols(d) * h_prev;
  Gates g;
  g.candidate = z.middleRows(0, d).array().tanh().matrix();
  g.output = z.middleRows(d, d).unaryExpr(&sigmoid);
  g.input = z.middleRows(2 * d, d).unaryExpr(&sigmoid);
  g.forget = z.middleRows(3 * d, d).unaryExpr(&sigmoid);
  return g;
}

void check_step_shapes(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev, Index d, Index e) {
  if (x.rows() != e || x.cols() != 1) {
    throw ShapeError("lstm_step: input " + shape_string(x) + " expected " + shape_string(e, 1));
  }
  if (h_prev.rows() != d || h_prev.cols() != 1 || c_prev.rows() != d || c_prev.cols() != 1) {
    throw ShapeError("lstm_step: state " + shape_string(h_prev) + "/" + shape_string(c_prev) + " expected " +
                     shape_string(d, 1));
  }
}

}  // namespace

LstmParams LstmParams::zeros(Index hidden, Index input) {
  return LstmParams{Tensor::Zero(4 * hidden, input + hidden), Tensor::Zero(4 * hidden, 1)};
}

void LstmParams::validate(const std::string& what) const {
  if (weight.rows() % 4 != 0 || weight.rows() == 0) {
    throw ShapeError(what + ": weight rows " + std::to_string(weight.rows()) + " not a positive multiple of 4");
  }
  if (weight.cols() <= hidden()) throw ShapeError(what + ": weight " + shape_string(weight) + " has no input columns");
  if (bias.rows() != weight.rows() || bias.cols() != 1) {
    throw ShapeError(what + ": bias " + shape_string(bias) + " does not match weight " + shape_string(weight));
  }
}

SoftmaxHead SoftmaxHead::zeros(Index classes, Index input_width) {
  return SoftmaxHead{Tensor::Zero(classes, input_width), Tensor::Zero(classes, 1)};
}

LstmState lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev, const LstmParams& p) {
  p.validate("lstm_step");
  check_step_shapes(x, h_prev, c_prev, p.hidden(), p.input());
  const Gates g = compute_gates(p.weight, p.bias, x, h_prev);
  LstmState s;
  s.c = g.candidate.cwiseProduct(g.input) + c_prev.cwiseProduct(g.forget);
  s.h = g.output.cwiseProduct(Tensor(s.c.array().tanh().matrix()));
  return s;
}

EncodeResult lstm_encode(const Tensor& inputs, const LstmParams& p, const LstmState* init) {
  if (inputs.rows() == 0) throw InputError("lstm_encode: empty sequence");
  const Index d = p.hidden();
  LstmState state = init ? *init : LstmState{Tensor::Zero(d, 1), Tensor::Zero(d, 1)};
  EncodeResult out;
  out.all_h.resize(inputs.rows(), d);
  for (Index t = 0; t < inputs.rows(); ++t) {
    state = lstm_step(inputs.row(t).transpose(), state.h, state.c, p);
    out.all_h.row(t) = state.h.col(0).transpose();
  }
  out.final_h = state.h;
  return out;
}

Tensor softmax_classify(const Tensor& h, const SoftmaxHead& head) {
  if (h.cols() != 1 || h.rows() != head.input_width()) {
    throw ShapeError("softmax_classify: feature " + shape_string(h) + " vs head " + shape_string(head.weight));
  }
  Tensor z = head.weight * h + head.bias;
  Tensor p = (z.array() - z.maxCoeff()).exp().matrix();
  return p / p.sum();
}

Var lstm_cell(Var inputs, Index t, Var state, const LstmVars& p) {
  const Index d = p.hidden();
  const Index e = p.input();
  if (inputs.cols() != e || t < 0 || t >= inputs.rows()) {
    throw ShapeError("lstm_cell: inputs " + shape_string(inputs.value()) + " row " + std::to_string(t) +
                     " vs input width " + std::to_string(e));
  }
  if (state.rows() != 2 * d || state.cols() != 1) {
    throw ShapeError("lstm_cell: state " + shape_string(state.value()) + " expected " + shape_string(2 * d, 1));
  }
  if (p.bias.rows() != 4 * d || p.bias.cols() != 1) {
    throw ShapeError("lstm_cell: bias " + shape_string(p.bias.value()) + " vs weight " + shape_string(p.weight.value()));
  }
  const Tensor x = inputs.value().row(t).transpose();
  const Tensor h_prev = state.value().topRows(d);
  const Tensor c_prev = state.value().bottomRows(d);
  Gates g = compute_gates(p.weight.value(), p.bias.value(), x, h_prev);

  Tensor out(2 * d, 1);
  out.bottomRows(d) = g.candidate.cwiseProduct(g.input) + c_prev.cwiseProduct(g.forget);
  Tensor tanh_c = out.bottomRows(d).array().tanh().matrix();
  out.topRows(d) = g.output.cwiseProduct(tanh_c);

  const int in_id = inputs.id, st_id = state.id, w_id = p.weight.id, b_id = p.bias.id;
  return inputs.tape->record(
      "lstm_cell", std::move(out), {in_id, st_id, w_id, b_id},
      [in_id, st_id, w_id, b_id, t, d, e, g = std::move(g), tanh_c = std::move(tanh_c)](Tape& tp, int self) {
        const Tensor& up = tp.grad(self);
        const auto g_h = up.topRows(d).array();
        const auto g_c = up.bottomRows(d).array();
        const Tensor& st = tp.value(st_id);
        const auto c_prev = st.bottomRows(d).array();

        const Tensor dc = (g_c + g_h * g.output.array() * (1.0 - tanh_c.array().square())).matrix();
        Tensor dz(4 * d, 1);
        dz.middleRows(0, d) = (dc.array() * g.input.array() * (1.0 - g.candidate.array().square())).matrix();
        dz.middleRows(d, d) = (g_h * tanh_c.array() * g.output.array() * (1.0 - g.output.array())).matrix();
        dz.middleRows(2 * d, d) = (dc.array() * g.candidate.array() * g.input.array() * (1.0 - g.input.array())).matrix();
        dz.middleRows(3 * d, d) = (dc.array() * c_prev * g.forget.array() * (1.0 - g.forget.array())).matrix();

        const Tensor& w = tp.value(w_id);
        if (tp.requires_grad(w_id)) {
          auto& gw = tp.grad_slot(w_id);
          gw.leftCols(e).noalias() += dz * tp.value(in_id).row(t);
          gw.rightCols(d).noalias() += dz * st.topRows(d).transpose();
        }
        if (tp.requires_grad(b_id)) tp.grad_slot(b_id) += dz;
        if (tp.requires_grad(in_id)) {
          tp.grad_slot(in_id).row(t).noalias() += (w.leftCols(e).transpose() * dz).transpose();
        }
        if (tp.requires_grad(st_id)) {
          auto& gs = tp.grad_slot(st_id);
          gs.topRows(d).noalias() += w.rightCols(d).transpose() * dz;
          gs.bottomRows(d) += (dc.array() * g.forget.array()).matrix();
        }
      });
}

std::pair<Var, Var> lstm_step_graph(Var x, Var h_prev, Var c_prev, const LstmVars& p) {
  const Index d = p.hidden();
  Var z = add(matmul(p.weight, concat({x, h_prev}, Axis::Rows)), p.bias);
  Var candidate = tanh(slice_rows(z, 0, d));
  Var output = sigmoid(slice_rows(z, d, d));
  Var input = sigmoid(slice_rows(z, 2 * d, d));
  Var forget = sigmoid(slice_rows(z, 3 * d, d));
  Var c = add(mul(candidate, input), mul(c_prev, forget));
  Var h = mul(output, tanh(c));
  return {h, c};
}

Var EncodedSequence::hidden_matrix() {
  if (!all_h_) all_h_ = stack_rows(std::span<const Var>(states), 0, hidden);
  return *all_h_;
}

EncodedSequence lstm_encode(Var inputs, const LstmVars& p, std::optional<Var> init_state) {
  if (inputs.rows() == 0) throw InputError("lstm_encode: empty sequence");
  const Index d = p.hidden();
  Var state = init_state ? *init_state : inputs.tape->constant(Tensor::Zero(2 * d, 1));
  EncodedSequence enc;
  enc.hidden = d;
  enc.states.reserve(static_cast<std::size_t>(inputs.rows()));
  for (Index t = 0; t < inputs.rows(); ++t) {
    state = lstm_cell(inputs, t, state, p);
    enc.states.push_back(state);
  }
  enc.final_h = slice_rows(state, 0, d);
  return enc;
}

Var softmax_classify(Var h, const HeadVars& head) {
  if (h.cols() != 1 || h.rows() != head.weight.cols()) {
    throw ShapeError("softmax_classify: feature " + shape_string(h.value()) + " vs head " +
                     shape_string(head.weight.value()));
  }
  return softmax(add(matmul(head.weight, h), head.bias));
}

Tensor uniform_tensor(Index rows, Index cols, std::mt19937_64& rng, double range) {
  std::uniform_real_distribution<double> dist(-range, range);
  Tensor t(rows, cols);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  return t;
}

LstmParams init_lstm(Index hidden, Index input, std::mt19937_64& rng) {
  LstmParams p;
  p.weight = uniform_tensor(4 * hidden, input + hidden, rng);
  p.bias = uniform_tensor(4 * hidden, 1, rng);
  return p;
}

SoftmaxHead init_head(Index classes, Index input_width, std::mt19937_64& rng) {
  SoftmaxHead h;
  h.weight = uniform_tensor(classes, input_width, rng);
  h.bias = uniform_tensor(classes, 1, rng);
  return h;
}

EmbeddingTable init_embeddings(Index vocab_size, Index dim, std::mt19937_64& rng) {
  return EmbeddingTable{uniform_tensor(vocab_size, dim, rng), true};
}

std::size_t load_embeddings(std::istream& in, const std::unordered_map<std::string, int>& vocab,
                            EmbeddingTable& table) {
  std::size_t loaded = 0;
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    auto it = vocab.find(token);
    if (it == vocab.end()) continue;
    values.clear();
    double v;
    while (fields >> v) values.push_back(v);
    if (!fields.eof()) throw InputError("embeddings line " + std::to_string(lineno) + ": non-numeric field");
    if (static_cast<Index>(values.size()) != table.dim()) {
      throw InputError("embeddings line " + std::to_string(lineno) + ": expected " + std::to_string(table.dim()) +
                       " values, got " + std::to_string(values.size()));
    }
    for (Index j = 0; j < table.dim(); ++j) table.matrix(it->second, j) = values[static_cast<std::size_t>(j)];
    ++loaded;
  }
  return loaded;
}

std::size_t load_embeddings(const std::string& path, const std::unordered_map<std::string, int>& vocab,
                            EmbeddingTable& table) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings file " + path);
  return load_embeddings(in, vocab, table);
}

}  // namespace aspmtl
