#include "aspmtl/model.hpp"

#include "aspmtl/errors.hpp"

#include <algorithm>

namespace aspmtl {

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::FullyShared: return "fs";
    case Scheme::SharedPrivate: return "sp";
    case Scheme::Adversarial: return "asp";
  }
  return "?";
}

std::string to_string(TransferMode m) { return m == TransferMode::SingleChannel ? "sc" : "bc"; }

Scheme parse_scheme(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "fs" || t == "fs-mtl") return Scheme::FullyShared;
  if (t == "sp" || t == "sp-mtl") return Scheme::SharedPrivate;
  if (t == "asp" || t == "asp-mtl") return Scheme::Adversarial;
  throw ConfigError("scheme: expected fs, sp or asp, got '" + text + "'");
}

TransferMode parse_transfer_mode(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "sc") return TransferMode::SingleChannel;
  if (t == "bc") return TransferMode::BiChannel;
  throw ConfigError("mode: expected sc or bc, got '" + text + "'");
}

void ModelConfig::validate() const {
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (embed < 1) throw ConfigError("embed must be >= 1");
  if (vocab < 2) throw ConfigError("vocabulary must hold at least the padding and UNK rows");
  if (classes.empty()) throw ConfigError("model needs at least one task");
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (classes[k] < 2) throw ConfigError("task " + std::to_string(k) + " needs at least 2 classes");
  }
  if (scheme == Scheme::Adversarial && classes.size() < 2) {
    throw ConfigError("asp scheme needs at least 2 tasks for the task discriminator");
  }
  if (transfer) {
    if (classes.size() != 1) throw ConfigError("transfer models have exactly one task");
    const Scheme expected = *transfer == TransferMode::SingleChannel ? Scheme::FullyShared : Scheme::SharedPrivate;
    if (scheme != expected) throw ConfigError("transfer mode " + to_string(*transfer) + " needs scheme " + to_string(expected));
  }
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Model m{config, {}};
  auto& p = m.params;
  p.embeddings = init_embeddings(config.vocab, config.embed, rng);
  p.shared = init_lstm(config.hidden, config.embed, rng);
  if (config.has_private()) {
    for (std::size_t k = 0; k < config.tasks(); ++k) p.priv.push_back(init_lstm(config.hidden, config.embed, rng));
  }
  for (std::size_t k = 0; k < config.tasks(); ++k) {
    p.heads.push_back(init_head(config.classes[k], config.feature_width(), rng));
  }
  if (config.has_discriminator()) p.disc = init_head(static_cast<Index>(config.tasks()), config.hidden, rng);
  return m;
}

Model zero_model(const ModelConfig& config) {
  config.validate();
  Model m{config, {}};
  auto& p = m.params;
  p.embeddings = EmbeddingTable{Tensor::Zero(config.vocab, config.embed), true};
  p.shared = LstmParams::zeros(config.hidden, config.embed);
  if (config.has_private()) {
    for (std::size_t k = 0; k < config.tasks(); ++k) p.priv.push_back(LstmParams::zeros(config.hidden, config.embed));
  }
  for (std::size_t k = 0; k < config.tasks(); ++k) {
    p.heads.push_back(SoftmaxHead::zeros(config.classes[k], config.feature_width()));
  }
  if (config.has_discriminator()) p.disc = SoftmaxHead::zeros(static_cast<Index>(config.tasks()), config.hidden);
  return m;
}

std::vector<ParamRef> named_parameters(Model& model) {
  auto& p = model.params;
  const bool shared_trainable = !model.config.shared_frozen();
  std::vector<ParamRef> out;
  out.push_back({"embedding", &p.embeddings.matrix, p.embeddings.trainable});
  out.push_back({"shared.weight", &p.shared.weight, shared_trainable});
  out.push_back({"shared.bias", &p.shared.bias, shared_trainable});
  for (std::size_t k = 0; k < p.priv.size(); ++k) {
    const std::string prefix = "private." + std::to_string(k);
    out.push_back({prefix + ".weight", &p.priv[k].weight, true});
    out.push_back({prefix + ".bias", &p.priv[k].bias, true});
  }
  for (std::size_t k = 0; k < p.heads.size(); ++k) {
    const std::string prefix = "head." + std::to_string(k);
    out.push_back({prefix + ".weight", &p.heads[k].weight, true});
    out.push_back({prefix + ".bias", &p.heads[k].bias, true});
  }
  if (p.disc) {
    out.push_back({"disc.weight", &p.disc->weight, true});
    out.push_back({"disc.bias", &p.disc->bias, true});
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> named_parameters(const Model& model) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& ref : named_parameters(const_cast<Model&>(model))) out.emplace_back(ref.name, ref.value);
  return out;
}

std::size_t lstm_count(const Model& model) { return 1 + model.params.priv.size(); }

ModelVars bind(Tape& tape, const Model& model) {
  auto refs = named_parameters(const_cast<Model&>(model));
  std::vector<Var> vars;
  vars.reserve(refs.size());
  for (const auto& r : refs) vars.push_back(r.trainable ? tape.parameter(r.name, *r.value) : tape.constant_ref(*r.value));
  std::size_t i = 0;
  ModelVars mv;
  mv.embeddings = vars[i++];
  mv.shared = LstmVars{vars[i], vars[i + 1]};
  i += 2;
  for (std::size_t k = 0; k < model.params.priv.size(); ++k, i += 2) mv.priv.push_back(LstmVars{vars[i], vars[i + 1]});
  for (std::size_t k = 0; k < model.params.heads.size(); ++k, i += 2) mv.heads.push_back(HeadVars{vars[i], vars[i + 1]});
  if (model.params.disc) mv.disc = HeadVars{vars[i], vars[i + 1]};
  return mv;
}

namespace {

void check_task(const Model& model, std::size_t task) {
  if (task >= model.config.tasks()) {
    throw InputError("unknown task index " + std::to_string(task) + " (model has " +
                     std::to_string(model.config.tasks()) + " tasks)");
  }
}

void check_tokens(std::span<const int> tokens) {
  if (tokens.empty()) throw InputError("empty sentence");
}

Tensor embed(const Model& model, std::span<const int> tokens) {
  const auto& table = model.params.embeddings.matrix;
  Tensor x(static_cast<Index>(tokens.size()), table.cols());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || tokens[t] >= table.rows()) {
      throw InputError("token id " + std::to_string(tokens[t]) + " outside vocabulary of " + std::to_string(table.rows()));
    }
    x.row(static_cast<Index>(t)) = table.row(tokens[t]);
  }
  return x;
}

Tensor concat_features(const Tensor& priv, const Tensor& shared) {
  Tensor f(priv.rows() + shared.rows(), 1);
  f << priv, shared;
  return f;
}

}  // namespace

ForwardVars forward(const ModelVars& vars, const Model& model, std::span<const int> tokens, std::size_t task,
                    const ForwardOptions& opts) {
  check_task(model, task);
  check_tokens(tokens);
  Var x = lookup(vars.embeddings, tokens);
  ForwardVars out;
  out.shared = lstm_encode(x, vars.shared);
  if (model.config.has_private()) {
    out.priv = lstm_encode(x, vars.priv[task]);
    out.feature = concat({out.priv->final_h, out.shared.final_h}, Axis::Rows);
  } else {
    out.feature = out.shared.final_h;
  }
  if (opts.classify) out.class_probs = softmax_classify(out.feature, vars.heads[task]);
  if (opts.discriminate && vars.disc) {
    out.disc_probs = softmax_classify(gradient_reversal(out.shared.final_h, opts.reversal), *vars.disc);
  }
  return out;
}

ForwardResult forward(const Model& model, std::span<const int> tokens, std::size_t task) {
  check_task(model, task);
  check_tokens(tokens);
  const Tensor x = embed(model, tokens);
  ForwardResult r;
  EncodeResult shared = lstm_encode(x, model.params.shared);
  r.shared_states = std::move(shared.all_h);
  r.shared_final = std::move(shared.final_h);
  Tensor feature;
  if (model.config.has_private()) {
    EncodeResult priv = lstm_encode(x, model.params.priv[task]);
    r.private_states = std::move(priv.all_h);
    r.private_final = std::move(priv.final_h);
    feature = concat_features(*r.private_final, r.shared_final);
  } else {
    feature = r.shared_final;
  }
  r.class_probs = softmax_classify(feature, model.params.heads[task]);
  if (model.params.disc) r.disc_probs = discriminate(r.shared_final, *model.params.disc);
  return r;
}

Tensor discriminate(const Tensor& shared_final, const SoftmaxHead& disc) { return softmax_classify(shared_final, disc); }

Tensor shared_features(const Model& model, std::span<const int> tokens) {
  check_tokens(tokens);
  return lstm_encode(embed(model, tokens), model.params.shared).final_h;
}

Index predict(const Model& model, std::span<const int> tokens, std::size_t task) {
  const Tensor p = forward(model, tokens, task).class_probs;
  Index best = 0;
  for (Index j = 1; j < p.rows(); ++j) {
    if (p(j, 0) > p(best, 0)) best = j;
  }
  return best;
}

Model build_transfer(const Model& source, TransferMode mode, Index classes, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.scheme = mode == TransferMode::SingleChannel ? Scheme::FullyShared : Scheme::SharedPrivate;
  cfg.hidden = source.config.hidden;
  cfg.embed = source.config.embed;
  cfg.vocab = source.config.vocab;
  cfg.classes = {classes};
  cfg.transfer = mode;
  Model m = init_model(cfg, seed);
  m.params.shared = source.params.shared;
  m.params.embeddings = source.params.embeddings;
  return m;
}

std::vector<ActivationRecord> dump_activations(const Model& model, std::span<const int> tokens, std::size_t task) {
  const ForwardResult r = forward(model, tokens, task);
  const auto& head = model.params.heads[task];
  std::vector<ActivationRecord> out;
  for (Index t = 0; t < r.shared_states.rows(); ++t) {
    ActivationRecord rec;
    rec.t = t;
    rec.token = tokens[static_cast<std::size_t>(t)];
    rec.shared_h = r.shared_states.row(t).transpose();
    if (r.private_states) {
      rec.private_h = Tensor(r.private_states->row(t).transpose());
      rec.class_probs = softmax_classify(concat_features(*rec.private_h, rec.shared_h), head);
    } else {
      rec.class_probs = softmax_classify(rec.shared_h, head);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace aspmtl
