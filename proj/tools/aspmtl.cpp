#include "aspmtl/checkpoint.hpp"
#include "aspmtl/config.hpp"
#include "aspmtl/data.hpp"
#include "aspmtl/errors.hpp"
#include "aspmtl/synth.hpp"
#include "aspmtl/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace aspmtl;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// -- settings ----------------------------------------------------------------------

struct Key {
  std::string name;
  std::string fallback;
  std::string help;
  bool flag = false;
};

const std::vector<Key> kDataKeys = {
    {"data", "", "corpus root"},
    {"seed", "1", "seed for partitioning, initialization and batching"},
    {"max-length", "500", "truncate sentences to this many tokens"},
    {"carve-dev", "200", "dev examples carved from <task>.task.train files"},
    {"tasks", "", "comma-separated task subset (default: all)"},
};

const std::vector<Key> kTrainKeys = {
    {"scheme", "asp", "fs | sp | asp"},
    {"hidden", "16", "LSTM hidden size d"},
    {"embed", "16", "embedding size e"},
    {"embeddings", "", "pretrained vectors, text format"},
    {"freeze-embeddings", "false", "keep the embedding table fixed", true},
    {"learning-rate", "0.01", "SGD learning rate"},
    {"lambda", "0.05", "adversarial weight (asp only)"},
    {"gamma", "0.01", "orthogonality weight (asp only)"},
    {"batch-size", "16", "sentences per batch"},
    {"max-epochs", "50", "epoch budget"},
    {"patience", "5", "early-stop patience in epochs"},
    {"clip-norm", "5", "global gradient-norm clip (inf disables)"},
    {"alpha", "", "comma-separated per-task loss weights"},
    {"use-unlabeled", "false", "add unlabeled batches to the adversarial loss (asp only)", true},
    {"unlabeled-ratio", "1", "unlabeled batches per labeled batch"},
    {"diff-mode", "sentence", "orthogonality rows: sentence | batch"},
    {"alternating", "false", "update the discriminator in a separate first step (asp only)", true},
};

const std::vector<Key> kGridKeys = {
    {"grid-learning-rates", "", "comma-separated learning rates"},
    {"grid-lambdas", "", "comma-separated lambdas"},
    {"grid-gammas", "", "comma-separated gammas"},
    {"jobs", "1", "cells trained concurrently"},
};

std::vector<Key> concat(std::initializer_list<std::vector<Key>> parts) {
  std::vector<Key> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

const std::vector<Key> kOut = {{"out", "", "output directory"}};

std::set<std::string> all_key_names();

struct Command {
  std::string name;
  std::string help;
  std::vector<Key> keys;
  std::function<json(const Settings&, json&)> run;  // returns outputs {relative path: sha1}
};

// -- hashing -----------------------------------------------------------------------

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// SHA-1 over "blob <size>\0<content>", matching git's object ids.
std::string blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

// {path: sha1} for a file or every regular file below a directory.
json hash_inputs(const fs::path& p) {
  json out = json::object();
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out[f.string()] = blob_sha1(read_file(f));
  } else if (fs::exists(p)) {
    out[p.string()] = blob_sha1(read_file(p));
  } else {
    throw IoError("no such file or directory: " + p.string());
  }
  return out;
}

// -- output ------------------------------------------------------------------------

fs::path require_out(const Settings& s) {
  const std::string out = s.get_string("out", "");
  if (out.empty()) throw ConfigError("out: an output directory is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  return out;
}

void write_output(const fs::path& dir, const std::string& rel, const std::string& bytes, json& outputs) {
  std::ofstream f(dir / rel, std::ios::binary);
  f << bytes;
  if (!f) throw IoError("cannot write " + (dir / rel).string());
  outputs[rel] = blob_sha1(bytes);
}

std::string format_error(double e) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << e;
  return s.str();
}

// -- data --------------------------------------------------------------------------

LoadOptions load_options(const Settings& s) {
  LoadOptions o;
  o.seed = s.get_u64("seed", 1);
  o.max_length = static_cast<std::size_t>(s.get_int("max-length", 500));
  o.carve_dev = static_cast<std::size_t>(s.get_int("carve-dev", 200));
  if (o.max_length < 1) throw ConfigError("max-length must be >= 1");
  return o;
}

Corpus load_data(const Settings& s, json& inputs) {
  const std::string root = s.get_string("data", "");
  if (root.empty()) throw ConfigError("data: a corpus root is required");
  inputs.update(hash_inputs(root));
  Corpus c = load_corpus(root, load_options(s));
  const std::string subset = s.get_string("tasks", "");
  if (subset.empty()) return c;
  Corpus picked;
  std::stringstream ss(subset);
  std::string name;
  while (std::getline(ss, name, ',')) {
    auto it = std::find_if(c.begin(), c.end(), [&](const TaskDataset& t) { return t.name == name; });
    if (it == c.end()) throw ConfigError("tasks: no task named '" + name + "' under " + root);
    picked.push_back(*it);
  }
  std::sort(picked.begin(), picked.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return picked;
}

std::vector<std::string> task_names(const Corpus& c) {
  std::vector<std::string> out;
  for (const auto& t : c) out.push_back(t.name);
  return out;
}

json data_settings(const Settings& s) {
  return {{"seed", s.get_string("seed", "1")},
          {"max-length", s.get_string("max-length", "500")},
          {"carve-dev", s.get_string("carve-dev", "200")}};
}

// -- training configuration -----------------------------------------------------

TrainConfig train_config(const Settings& s) {
  TrainConfig c;
  c.learning_rate = s.get_double("learning-rate", c.learning_rate);
  c.lambda = s.get_double("lambda", c.lambda);
  c.gamma = s.get_double("gamma", c.gamma);
  c.batch_size = static_cast<std::size_t>(s.get_int("batch-size", 16));
  c.max_epochs = static_cast<std::size_t>(s.get_int("max-epochs", 50));
  c.patience = static_cast<std::size_t>(s.get_int("patience", 5));
  c.clip_norm = s.get_double("clip-norm", c.clip_norm);
  c.seed = s.get_u64("seed", 1);
  c.alpha = s.get_doubles("alpha", {});
  c.use_unlabeled = s.get_bool("use-unlabeled", false);
  c.unlabeled_ratio = static_cast<std::size_t>(s.get_int("unlabeled-ratio", 1));
  c.diff_mode = parse_diff_mode(s.get_string("diff-mode", "sentence"));
  c.alternating = s.get_bool("alternating", false);
  c.validate();
  return c;
}

ModelConfig model_config(const Settings& s, Scheme scheme, const std::vector<EncodedTask>& data, std::size_t vocab) {
  ModelConfig m;
  m.scheme = scheme;
  m.hidden = static_cast<Index>(s.get_int("hidden", 16));
  m.embed = static_cast<Index>(s.get_int("embed", 16));
  m.vocab = static_cast<Index>(vocab);
  for (const auto& t : data) m.classes.push_back(t.classes);
  m.validate();
  return m;
}

Model fresh_model(const Settings& s, const ModelConfig& mc, const Vocabulary& v, std::uint64_t seed) {
  Model m = init_model(mc, seed);
  const std::string emb = s.get_string("embeddings", "");
  if (!emb.empty()) load_embeddings(emb, v.index(), m.params.embeddings);
  m.params.embeddings.trainable = !s.get_bool("freeze-embeddings", false);
  return m;
}

json checkpoint_extra(const Vocabulary& v, const std::vector<std::string>& tasks, const Settings& s) {
  return {{"vocab", v.tokens()}, {"tasks", tasks}, {"data", data_settings(s)}};
}

std::string checkpoint_bytes(const Checkpoint& ck) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, ck);
  return out.str();
}

std::string history_csv(const TrainHistory& h, const std::vector<std::string>& names) {
  std::ostringstream out;
  h.write_csv(out, names);
  return out.str();
}

struct Loaded {
  Model model;
  Vocabulary vocab;
  std::vector<std::string> tasks;
  json data;
};

Loaded load_model(const Settings& s, json& inputs) {
  const std::string path = s.get_string("checkpoint", "");
  if (path.empty()) throw ConfigError("checkpoint: a checkpoint path is required");
  inputs.update(hash_inputs(path));
  Checkpoint ck = load_checkpoint(path);
  Loaded out{model_from_checkpoint(ck), Vocabulary(), {}, json::object()};
  try {
    out.vocab = Vocabulary::from_tokens(ck.manifest.at("extra").at("vocab").get<std::vector<std::string>>());
    out.tasks = ck.manifest.at("extra").at("tasks").get<std::vector<std::string>>();
    out.data = ck.manifest.at("extra").value("data", json::object());
  } catch (const json::exception& e) {
    throw CompatibilityError(path + ": manifest lacks vocabulary or task names (" + e.what() + ")");
  }
  if (out.tasks.size() != out.model.config.tasks())
    throw CompatibilityError(path + ": task names do not match the model's task count");
  return out;
}

// Data settings recorded at training time, unless given explicitly.
Settings with_training_data_settings(Settings s, const json& recorded) {
  for (const char* k : {"seed", "max-length", "carve-dev"})
    if (!s.has(k) && recorded.contains(k)) s.set(k, recorded.at(k).get<std::string>());
  return s;
}

// -- commands ----------------------------------------------------------------------

json cmd_train(const Settings& s, json& inputs) {
  const Scheme scheme = parse_scheme(s.get_string("scheme", "asp"));
  const TrainConfig cfg = train_config(s);
  const fs::path out = require_out(s);
  Corpus corpus = load_data(s, inputs);
  if (!s.get_string("embeddings", "").empty()) inputs.update(hash_inputs(s.get_string("embeddings", "")));
  Vocabulary v = Vocabulary::build(corpus);
  auto data = encode_corpus(corpus, v);
  const ModelConfig mc = model_config(s, scheme, data, v.size());
  TrainResult r = train_multitask(fresh_model(s, mc, v, cfg.seed), data, cfg);

  json outputs = json::object();
  write_output(out, "history.csv", history_csv(r.history, task_names(corpus)), outputs);
  write_output(out, "model.ckpt", checkpoint_bytes(to_checkpoint(r.model, checkpoint_extra(v, task_names(corpus), s))),
               outputs);
  if (r.diverged) throw DivergenceError("training diverged (best-so-far model written): " + r.divergence);
  const auto& best = r.history.epochs[r.history.best_epoch];
  std::printf("best epoch %zu, mean dev error %s\n", best.epoch, format_error(best.mean_dev_error).c_str());
  return outputs;
}

json cmd_eval(const Settings& given, json& inputs) {
  Loaded m = load_model(given, inputs);
  const Settings s = with_training_data_settings(given, m.data);
  const Split split = parse_split(s.get_string("split", "test"));
  Corpus corpus = load_data(s, inputs);
  auto data = encode_corpus(corpus, m.vocab);
  std::ostringstream csv;
  csv << "task,error\n";
  json table = json::array();
  double total = 0.0;
  for (std::size_t k = 0; k < m.tasks.size(); ++k) {
    auto it = std::find_if(data.begin(), data.end(), [&](const EncodedTask& t) { return t.name == m.tasks[k]; });
    if (it == data.end()) throw CompatibilityError("checkpoint task '" + m.tasks[k] + "' is not in the data");
    if (it->classes != m.model.config.classes[k])
      throw CompatibilityError("task '" + m.tasks[k] + "' class count differs from the checkpoint");
    const double err = evaluate(m.model, it->split(split), k);
    total += err;
    csv << m.tasks[k] << ',' << format_error(err) << '\n';
    table.push_back({{"task", m.tasks[k]}, {"error", err}});
  }
  const double avg = total / static_cast<double>(m.tasks.size());
  csv << "AVG," << format_error(avg) << '\n';
  std::cout << csv.str();
  json outputs = json::object();
  if (!s.get_string("out", "").empty()) {
    const fs::path out = require_out(s);
    write_output(out, "eval.csv", csv.str(), outputs);
    json j = {{"split", to_string(split)}, {"tasks", table}, {"avg", avg}};
    write_output(out, "eval.json", j.dump(2) + "\n", outputs);
  }
  return outputs;
}

std::vector<TransferMode> transfer_modes(const Settings& s) {
  const std::string m = s.get_string("mode", "bc");
  if (m == "both") return {TransferMode::SingleChannel, TransferMode::BiChannel};
  return {parse_transfer_mode(m)};
}

std::string tensor_sha1(const Tensor& t) {
  return blob_sha1(std::string(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(double)));
}

// Hash of the shared encoder; transfer must leave it untouched.
std::string shared_sha1(const Model& m) { return tensor_sha1(m.params.shared.weight) + tensor_sha1(m.params.shared.bias); }

json cmd_transfer(const Settings& given, json& inputs) {
  const TrainConfig cfg = train_config(given);
  const auto modes = transfer_modes(given);
  const bool loo = given.get_bool("leave-one-out", false);
  json outputs = json::object();
  std::ostringstream csv;
  csv << "task,mode,dev_error,test_error\n";
  json rows = json::array();
  std::map<std::string, std::pair<double, int>> avg;
  auto record = [&](const std::string& task, TransferMode mode, const TransferResult& r, const Model& source) {
    if (shared_sha1(r.model) != shared_sha1(source))
      throw ContractError("transfer changed the frozen shared encoder for task " + task);
    csv << task << ',' << to_string(mode) << ',' << format_error(r.dev_error) << ',' << format_error(r.test_error)
        << '\n';
    rows.push_back({{"task", task},
                    {"mode", to_string(mode)},
                    {"dev_error", r.dev_error},
                    {"test_error", r.test_error},
                    {"feature_width", r.model.config.feature_width()},
                    {"channels", mode == TransferMode::BiChannel ? json{{"shared", r.model.config.hidden}, {"private", r.model.config.hidden}}
                                                                 : json{{"shared", r.model.config.hidden}}},
                    {"frozen_shared_sha1", shared_sha1(source)}});
    auto& a = avg[to_string(mode)];
    a.first += r.test_error;
    a.second += 1;
  };

  const fs::path out = require_out(given);
  if (loo) {
    if (given.has("checkpoint")) throw ConfigError("checkpoint: leave-one-out trains its own sources");
    const Scheme scheme = parse_scheme(given.get_string("scheme", "asp"));
    Corpus corpus = load_data(given, inputs);
    if (corpus.size() < 3) throw ConfigError("leave-one-out: needs at least 3 tasks");
    Vocabulary v = Vocabulary::build(corpus);
    auto data = encode_corpus(corpus, v);
    for (std::size_t held = 0; held < data.size(); ++held) {
      std::vector<EncodedTask> sources;
      for (std::size_t k = 0; k < data.size(); ++k)
        if (k != held) sources.push_back(data[k]);
      const ModelConfig mc = model_config(given, scheme, sources, v.size());
      TrainResult src = train_multitask(fresh_model(given, mc, v, cfg.seed), sources, cfg);
      if (src.diverged) throw DivergenceError("source training without " + data[held].name + " diverged: " + src.divergence);
      for (TransferMode mode : modes) record(data[held].name, mode, train_transfer(src.model, data[held], mode, cfg), src.model);
    }
  } else {
    Loaded m = load_model(given, inputs);
    const Settings s = with_training_data_settings(given, m.data);
    const std::string target = s.get_string("target", "");
    if (target.empty()) throw ConfigError("target: name the target task or pass --leave-one-out");
    Corpus corpus = load_data(s, inputs);
    auto it = std::find_if(corpus.begin(), corpus.end(), [&](const TaskDataset& t) { return t.name == target; });
    if (it == corpus.end()) throw ConfigError("target: no task named '" + target + "' in the data");
    Corpus one{*it};
    EncodedTask t = encode_corpus(one, m.vocab)[0];
    for (TransferMode mode : modes) {
      TransferResult r = train_transfer(m.model, t, mode, cfg);
      record(target, mode, r, m.model);
      write_output(out, "model." + to_string(mode) + ".ckpt",
                   checkpoint_bytes(to_checkpoint(r.model, checkpoint_extra(m.vocab, {target}, s))), outputs);
      write_output(out, "history." + to_string(mode) + ".csv", history_csv(r.history, {target}), outputs);
    }
  }
  for (const auto& [mode, a] : avg)
    csv << "AVG," << mode << ",," << format_error(a.first / a.second) << '\n';
  std::cout << csv.str();
  write_output(out, "transfer.csv", csv.str(), outputs);
  write_output(out, "transfer.json", json{{"rows", rows}}.dump(2) + "\n", outputs);
  return outputs;
}

json cmd_synth(const Settings& s, json& inputs) {
  SynthSpec spec;
  const std::string path = s.get_string("spec", "");
  if (!path.empty()) {
    inputs.update(hash_inputs(path));
    spec = load_synth_spec(path);
  }
  if (s.has("seed")) spec.seed = s.get_u64("seed", spec.seed);
  spec.validate();
  const fs::path out = require_out(s);
  write_synthetic(out, generate_synthetic(spec), spec);
  json outputs = json::object();
  const json written = hash_inputs(out);
  for (const auto& [file, sha] : written.items()) {
    const std::string rel = fs::relative(file, out).generic_string();
    if (rel != "manifest.json") outputs[rel] = sha;
  }
  std::printf("wrote %zu tasks to %s\n", spec.tasks, out.string().c_str());
  return outputs;
}

json cmd_dump(const Settings& s, json& inputs) {
  Loaded m = load_model(s, inputs);
  const std::string task = s.get_string("task", "");
  auto it = std::find(m.tasks.begin(), m.tasks.end(), task);
  if (it == m.tasks.end()) throw ConfigError("task: checkpoint has no task named '" + task + "'");
  const auto k = static_cast<std::size_t>(it - m.tasks.begin());
  const std::string path = s.get_string("sentences", "");
  if (path.empty()) throw ConfigError("sentences: a sentence file is required");
  inputs.update(hash_inputs(path));
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  const auto sentences = read_unlabeled(in, path, static_cast<std::size_t>(s.get_int("max-length", 500)));
  const Index d = m.model.config.hidden, C = m.model.config.classes[k];
  const bool priv = m.model.config.has_private();
  std::ostringstream csv;
  csv << std::setprecision(17) << "sentence,t,token";
  for (Index i = 0; i < d; ++i) csv << ",shared_" << i;
  if (priv)
    for (Index i = 0; i < d; ++i) csv << ",private_" << i;
  for (Index c = 0; c < C; ++c) csv << ",prob_" << c;
  csv << ",pred\n";
  for (std::size_t n = 0; n < sentences.size(); ++n) {
    const auto ids = m.vocab.encode(sentences[n].tokens);
    for (const auto& r : dump_activations(m.model, ids, k)) {
      csv << n << ',' << r.t << ',' << sentences[n].tokens[static_cast<std::size_t>(r.t)];
      for (Index i = 0; i < d; ++i) csv << ',' << r.shared_h(i, 0);
      if (priv)
        for (Index i = 0; i < d; ++i) csv << ',' << (*r.private_h)(i, 0);
      Index best = 0;
      for (Index c = 0; c < C; ++c) {
        csv << ',' << r.class_probs(c, 0);
        if (r.class_probs(c, 0) > r.class_probs(best, 0)) best = c;
      }
      csv << ',' << best << '\n';
    }
  }
  json outputs = json::object();
  write_output(require_out(s), "activations.csv", csv.str(), outputs);
  return outputs;
}

json cmd_grid(const Settings& s, json& inputs) {
  const Scheme scheme = parse_scheme(s.get_string("scheme", "asp"));
  const TrainConfig base = train_config(s);
  Grid grid{s.get_doubles("grid-learning-rates", {}), s.get_doubles("grid-lambdas", {}), s.get_doubles("grid-gammas", {})};
  const long long jobs = s.get_int("jobs", 1);
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  const fs::path out = require_out(s);
  Corpus corpus = load_data(s, inputs);
  Vocabulary v = Vocabulary::build(corpus);
  auto data = encode_corpus(corpus, v);
  const ModelConfig mc = model_config(s, scheme, data, v.size());
  ModelFactory factory = [&](const TrainConfig& c) { return fresh_model(s, mc, v, c.seed); };
  GridResult r = grid_search(factory, data, base, grid, static_cast<std::size_t>(jobs));
  std::ostringstream csv;
  csv << std::setprecision(17) << "learning_rate,lambda,gamma,mean_dev_error,diverged,best\n";
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.cells[i];
    csv << c.config.learning_rate << ',' << c.config.lambda << ',' << c.config.gamma << ',' << c.mean_dev_error << ','
        << (c.diverged ? 1 : 0) << ',' << (i == r.best ? 1 : 0) << '\n';
  }
  std::cout << csv.str();
  json outputs = json::object();
  write_output(out, "grid.csv", csv.str(), outputs);
  return outputs;
}

const std::vector<Command>& commands() {
  static const std::vector<Command> all = {
      {"train", "train a multi-task model", concat({kDataKeys, kTrainKeys, kOut}), cmd_train},
      {"eval", "per-task error table for a checkpoint",
       concat({kDataKeys, {{"checkpoint", "", "model checkpoint"}, {"split", "test", "train | dev | test"}}, kOut}),
       cmd_eval},
      {"transfer", "train on a new task around a frozen shared encoder",
       concat({kDataKeys, kTrainKeys,
               {{"checkpoint", "", "source checkpoint"},
                {"target", "", "target task name"},
                {"mode", "bc", "sc | bc | both"},
                {"leave-one-out", "false", "hold out each task in turn, training sources on the rest", true}},
               kOut}),
       cmd_transfer},
      {"synth", "generate a synthetic multi-task corpus",
       concat({{{"spec", "", "synthetic corpus spec (key = value)"}, {"seed", "1", "generator seed"}}, kOut}), cmd_synth},
      {"dump", "per-timestep hidden states and class probabilities",
       concat({{{"checkpoint", "", "model checkpoint"},
                {"sentences", "", "one sentence per line"},
                {"task", "", "task name"},
                {"max-length", "500", "truncate sentences to this many tokens"}},
               kOut}),
       cmd_dump},
      {"grid", "grid search over learning rate, lambda and gamma", concat({kDataKeys, kTrainKeys, kGridKeys, kOut}),
       cmd_grid},
  };
  return all;
}

std::set<std::string> all_key_names() {
  std::set<std::string> out;
  for (const auto& c : commands())
    for (const auto& k : c.keys) out.insert(k.name);
  return out;
}

const Command& find_command(const std::string& name) {
  for (const auto& c : commands())
    if (c.name == name) return c;
  throw ConfigError("unknown command '" + name + "'");
}

void check_scheme_keys(const Command& cmd, const Settings& explicit_settings) {
  const bool has_scheme = std::any_of(cmd.keys.begin(), cmd.keys.end(), [](const Key& k) { return k.name == "scheme"; });
  if (!has_scheme) return;
  const Scheme scheme = parse_scheme(explicit_settings.get_string("scheme", "asp"));
  if (scheme == Scheme::Adversarial) return;
  for (const char* k : {"lambda", "gamma", "use-unlabeled", "alternating", "grid-lambdas", "grid-gammas"})
    if (explicit_settings.has(k))
      throw ConfigError(std::string(k) + ": only meaningful for --scheme asp, got --scheme " + to_string(scheme));
}

// Every key of the command, explicit values first, defaults for the rest.
Settings resolve(const Command& cmd, const Settings& explicit_settings) {
  Settings s = explicit_settings;
  for (const auto& k : cmd.keys)
    if (!s.has(k.name) && !k.fallback.empty()) s.set(k.name, k.fallback);
  return s;
}

int execute(const Command& cmd, const Settings& explicit_settings, const std::string& replay_of = "") {
  check_scheme_keys(cmd, explicit_settings);
  const Settings s = resolve(cmd, explicit_settings);
  const auto t0 = std::chrono::steady_clock::now();
  json inputs = json::object();
  json outputs = cmd.run(s, inputs);
  const std::string out = s.get_string("out", "");
  if (out.empty()) return 0;
  json manifest = {
      {"command", cmd.name},
      {"config", s.values()},
      {"explicit", explicit_settings.values()},
      {"seed", s.get_string("seed", "")},
      {"inputs", inputs},
      {"outputs", outputs},
      {"duration_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
  };
  if (!replay_of.empty()) manifest["replay_of"] = replay_of;
  std::ofstream f(fs::path(out) / "manifest.json");
  f << manifest.dump(2) << '\n';
  if (!f) throw IoError("cannot write " + (fs::path(out) / "manifest.json").string());
  return 0;
}

int replay(const std::string& manifest_path, const std::string& out) {
  json m;
  try {
    m = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw IoError(manifest_path + ": " + e.what());
  }
  if (out.empty()) throw ConfigError("out: replay needs a fresh output directory");
  const Command& cmd = find_command(m.at("command").get<std::string>());
  for (const auto& [path, sha] : m.at("inputs").items()) {
    if (!fs::exists(path)) throw IoError("input missing: " + path);
    if (blob_sha1(read_file(path)) != sha.get<std::string>())
      throw CompatibilityError("input changed since the recorded run: " + path);
  }
  Settings explicit_settings;
  for (const auto& [k, v] : m.at("explicit").items()) explicit_settings.set(k, v.get<std::string>());
  explicit_settings.set("out", out);
  execute(cmd, explicit_settings, manifest_path);
  json now = json::parse(read_file(fs::path(out) / "manifest.json"));
  std::size_t same = 0, differ = 0;
  for (const auto& [rel, sha] : m.at("outputs").items()) {
    const bool ok = now.at("outputs").contains(rel) && now["outputs"][rel] == sha;
    (ok ? same : differ) += 1;
    if (!ok) std::fprintf(stderr, "replay: %s differs\n", rel.c_str());
  }
  std::printf("replay: %zu output(s) identical, %zu differ\n", same, differ);
  return differ ? 1 : 0;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const InputError*>(&e)) return 2;
  if (dynamic_cast<const ConfigError*>(&e)) return 3;
  if (dynamic_cast<const CompatibilityError*>(&e)) return 4;
  if (dynamic_cast<const DivergenceError*>(&e)) return 5;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial shared-private multi-task text classification"};
  app.require_subcommand(1);

  struct Bound {
    const Command* cmd;
    CLI::App* sub;
    std::map<std::string, std::string> values;
    std::map<std::string, bool> flags;
    std::map<std::string, CLI::Option*> opts;
    std::string config;
  };
  std::vector<std::unique_ptr<Bound>> bound;
  for (const auto& cmd : commands()) {
    auto b = std::make_unique<Bound>();
    b->cmd = &cmd;
    b->sub = app.add_subcommand(cmd.name, cmd.help);
    b->sub->add_option("--config", b->config, "key = value settings file (flags win)");
    for (const auto& k : cmd.keys) {
      const std::string help = k.help + (k.fallback.empty() ? "" : " [" + k.fallback + "]");
      b->opts[k.name] = k.flag ? b->sub->add_flag("--" + k.name, b->flags[k.name], help)
                               : b->sub->add_option("--" + k.name, b->values[k.name], help);
    }
    bound.push_back(std::move(b));
  }
  std::string manifest, replay_out;
  CLI::App* rep = app.add_subcommand("replay", "re-run a recorded manifest and compare outputs bitwise");
  rep->add_option("manifest", manifest, "manifest.json of an earlier run")->required();
  rep->add_option("--out", replay_out, "output directory for the re-run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  try {
    if (rep->parsed()) return replay(manifest, replay_out);
    for (const auto& b : bound) {
      if (!b->sub->parsed()) continue;
      Settings s;
      if (!b->config.empty()) s = Settings::load(b->config);
      s.require_known(all_key_names());
      std::vector<std::string> names;
      for (const auto& k : b->cmd->keys) names.push_back(k.name);
      s.apply_env("ASPMTL_", names);
      for (const auto& k : b->cmd->keys) {
        if (b->opts[k.name]->count() == 0) continue;
        s.set(k.name, k.flag ? (b->flags[k.name] ? "true" : "false") : b->values[k.name]);
      }
      Settings known;
      for (const auto& [key, value] : s.values())
        if (b->opts.count(key)) known.set(key, value);
      return execute(*b->cmd, known);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
