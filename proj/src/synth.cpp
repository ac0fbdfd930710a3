#include "aspmtl/synth.hpp"

#include "aspmtl/config.hpp"
#include "aspmtl/errors.hpp"

#include <fstream>
#include <ostream>
#include <random>

namespace aspmtl {

namespace fs = std::filesystem;

void SynthSpec::validate() const {
  if (tasks < 2) throw ConfigError("synth: tasks must be >= 2");
  if (shared_tokens == 0 && private_tokens == 0) throw ConfigError("synth: no polar tokens (shared and private both 0)");
  if (conflicting_tokens == 0) throw ConfigError("synth: conflicting_tokens must be >= 1");
  if (min_length < 1 || max_length < min_length) throw ConfigError("synth: need 1 <= min_length <= max_length");
  for (double r : {shared_rate, private_rate, contaminant_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("synth: token rates must lie in [0, 1]");
  }
  if (shared_rate + private_rate + contaminant_rate > 1.0 + 1e-12) {
    throw ConfigError("synth: shared_rate + private_rate + contaminant_rate exceeds 1");
  }
  if (shared_rate + private_rate <= 0.0) throw ConfigError("synth: sentences would carry no polar tokens");
  if (shared_tokens == 0 && shared_rate > 0.0) throw ConfigError("synth: shared_rate > 0 with no shared tokens");
  if (neutral_tokens == 0 && shared_rate + private_rate + contaminant_rate < 1.0) {
    throw ConfigError("synth: filler positions need neutral tokens");
  }
  if (!(label_noise >= 0.0 && label_noise < 0.5)) throw ConfigError("synth: label_noise must lie in [0, 0.5)");
  if (sentences_per_task < 10) throw ConfigError("synth: sentences_per_task must be >= 10");
}

SynthSpec parse_synth_spec(std::istream& in) {
  const Settings s = Settings::parse(in, "synth spec");
  s.require_known({"tasks", "shared_tokens", "private_tokens", "conflicting_tokens", "neutral_tokens", "min_length",
                   "max_length", "shared_rate", "private_rate", "contaminant_rate", "label_noise",
                   "sentences_per_task", "unlabeled_per_task", "seed"});
  SynthSpec spec;
  auto sz = [&](const char* key, std::size_t fallback) {
    const long long v = s.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string("synth: ") + key + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  spec.tasks = sz("tasks", spec.tasks);
  spec.shared_tokens = sz("shared_tokens", spec.shared_tokens);
  spec.private_tokens = sz("private_tokens", spec.private_tokens);
  spec.conflicting_tokens = sz("conflicting_tokens", spec.conflicting_tokens);
  spec.neutral_tokens = sz("neutral_tokens", spec.neutral_tokens);
  spec.min_length = sz("min_length", spec.min_length);
  spec.max_length = sz("max_length", spec.max_length);
  spec.shared_rate = s.get_double("shared_rate", spec.shared_rate);
  spec.private_rate = s.get_double("private_rate", spec.private_rate);
  spec.contaminant_rate = s.get_double("contaminant_rate", spec.contaminant_rate);
  spec.label_noise = s.get_double("label_noise", spec.label_noise);
  spec.sentences_per_task = sz("sentences_per_task", spec.sentences_per_task);
  spec.unlabeled_per_task = sz("unlabeled_per_task", spec.unlabeled_per_task);
  spec.seed = s.get_u64("seed", spec.seed);
  spec.validate();
  return spec;
}

SynthSpec load_synth_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synth spec " + path.string());
  return parse_synth_spec(in);
}

void write_synth_spec(std::ostream& out, const SynthSpec& spec) {
  out << "tasks = " << spec.tasks << '\n'
      << "shared_tokens = " << spec.shared_tokens << '\n'
      << "private_tokens = " << spec.private_tokens << '\n'
      << "conflicting_tokens = " << spec.conflicting_tokens << '\n'
      << "neutral_tokens = " << spec.neutral_tokens << '\n'
      << "min_length = " << spec.min_length << '\n'
      << "max_length = " << spec.max_length << '\n'
      << "shared_rate = " << spec.shared_rate << '\n'
      << "private_rate = " << spec.private_rate << '\n'
      << "contaminant_rate = " << spec.contaminant_rate << '\n'
      << "label_noise = " << spec.label_noise << '\n'
      << "sentences_per_task = " << spec.sentences_per_task << '\n'
      << "unlabeled_per_task = " << spec.unlabeled_per_task << '\n'
      << "seed = " << spec.seed << '\n';
}

std::string to_string(TokenKind k) {
  switch (k) {
    case TokenKind::Shared: return "shared";
    case TokenKind::Private: return "private";
    case TokenKind::Conflicting: return "conflicting";
    case TokenKind::Neutral: return "neutral";
  }
  return "?";
}

int SynthCorpus::label(std::size_t task, const std::vector<std::string>& tokens) const {
  int total = 0;
  const auto& map = polarity.at(task);
  for (const auto& t : tokens) {
    if (auto it = map.find(t); it != map.end()) total += it->second;
  }
  if (total == 0) return -1;
  return total > 0 ? 1 : 0;
}

namespace {

std::string task_name(std::size_t k) { return "task" + std::to_string(k); }

}  // namespace

SynthCorpus generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const std::size_t K = spec.tasks;
  SynthCorpus out;
  out.polarity.resize(K);

  std::vector<std::string> shared, neutral;
  std::vector<std::vector<std::string>> own(K);  // private pool per task, conflicting included
  for (std::size_t i = 0; i < spec.shared_tokens; ++i) {
    const std::string tok = "s" + std::to_string(i);
    const int pol = i % 2 == 0 ? 1 : -1;
    shared.push_back(tok);
    out.provenance.push_back({tok, TokenKind::Shared, -1, pol});
    for (auto& m : out.polarity) m[tok] = pol;
  }
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < spec.private_tokens; ++i) {
      const std::string tok = "p" + std::to_string(k) + "_" + std::to_string(i);
      const int pol = i % 2 == 0 ? 1 : -1;
      own[k].push_back(tok);
      out.provenance.push_back({tok, TokenKind::Private, static_cast<int>(k), pol});
      out.polarity[k][tok] = pol;
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t j = (k + 1) % K;
    if (j == k || (K == 2 && k == 1)) continue;  // with two tasks the pair (0,1) is the only one
    for (std::size_t i = 0; i < spec.conflicting_tokens; ++i) {
      const std::string tok = "c" + std::to_string(k) + "_" + std::to_string(j) + "_" + std::to_string(i);
      const int pol = i % 2 == 0 ? 1 : -1;
      own[k].push_back(tok);
      own[j].push_back(tok);
      out.polarity[k][tok] = pol;
      out.polarity[j][tok] = -pol;
      out.provenance.push_back({tok, TokenKind::Conflicting, static_cast<int>(k), pol});
      out.provenance.push_back({tok, TokenKind::Conflicting, static_cast<int>(j), -pol});
    }
  }
  for (std::size_t i = 0; i < spec.neutral_tokens; ++i) {
    const std::string tok = "n" + std::to_string(i);
    neutral.push_back(tok);
    out.provenance.push_back({tok, TokenKind::Neutral, -1, 0});
  }

  // Contaminants for task k: other tasks' private tokens that are neutral under k.
  std::vector<std::vector<std::string>> contaminants(K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < K; ++j) {
      if (j == k) continue;
      for (const auto& tok : own[j]) {
        if (!out.polarity[k].count(tok)) contaminants[k].push_back(tok);
      }
    }
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&](const std::vector<std::string>& pool) {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };

  auto sentence = [&](std::size_t k) {
    std::vector<std::string> toks(length(rng));
    for (auto& tok : toks) {
      double u = unit(rng);
      if (u < spec.shared_rate && !shared.empty()) {
        tok = pick(shared);
      } else if ((u -= spec.shared_rate) < spec.private_rate && !own[k].empty()) {
        tok = pick(own[k]);
      } else if ((u -= spec.private_rate) < spec.contaminant_rate && !contaminants[k].empty()) {
        tok = pick(contaminants[k]);
      } else {
        tok = neutral.empty() ? pick(shared) : pick(neutral);
      }
    }
    return toks;
  };

  constexpr std::size_t kMaxAttempts = 100000;
  out.labeled.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    TaskDataset task;
    task.name = task_name(k);
    task.classes = 2;
    auto& labeled = out.labeled[k];
    for (std::size_t n = 0; n < spec.sentences_per_task; ++n) {
      const int target = n % 2 == 0 ? 1 : 0;
      std::size_t attempts = 0;
      for (;;) {
        if (++attempts > kMaxAttempts) throw ConfigError("synth: cannot generate a sentence with the requested label");
        auto toks = sentence(k);
        if (out.label(k, toks) != target) continue;
        int label = target;
        if (spec.label_noise > 0.0 && unit(rng) < spec.label_noise) label = 1 - label;
        labeled.push_back(Example{std::move(toks), label});
        break;
      }
    }
    for (std::size_t n = 0; n < spec.unlabeled_per_task; ++n) task.unlabeled.push_back(Example{sentence(k), -1});

    const Partition p = partition(labeled.size(), spec.seed);
    for (auto i : p.train) task.train.push_back(labeled[i]);
    for (auto i : p.dev) task.dev.push_back(labeled[i]);
    for (auto i : p.test) task.test.push_back(labeled[i]);
    out.corpus.push_back(std::move(task));
  }
  return out;
}

void write_synthetic(const fs::path& root, const SynthCorpus& synth, const SynthSpec& spec) {
  for (std::size_t k = 0; k < synth.corpus.size(); ++k) {
    const auto& task = synth.corpus[k];
    const fs::path dir = root / task.name;
    fs::create_directories(dir);
    std::ofstream lab(dir / "labeled", std::ios::trunc);
    if (!lab) throw IoError("cannot write " + (dir / "labeled").string());
    write_labeled(lab, synth.labeled[k]);
    if (!task.unlabeled.empty()) {
      std::ofstream unl(dir / "unlabeled", std::ios::trunc);
      if (!unl) throw IoError("cannot write " + (dir / "unlabeled").string());
      write_unlabeled(unl, task.unlabeled);
    }
  }
  std::ofstream prov(root / "provenance.tsv", std::ios::trunc);
  if (!prov) throw IoError("cannot write provenance sidecar under " + root.string());
  for (const auto& info : synth.provenance) {
    prov << info.token << '\t' << to_string(info.kind) << '\t'
         << (info.owner < 0 ? std::string("*") : task_name(static_cast<std::size_t>(info.owner))) << '\t'
         << info.polarity << '\n';
  }
  std::ofstream sp(root / "spec.txt", std::ios::trunc);
  if (!sp) throw IoError("cannot write spec copy under " + root.string());
  write_synth_spec(sp, spec);
}

}  // namespace aspmtl
