#pragma once

#include "aspmtl/data.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace aspmtl {

// Multi-task sentiment corpus with known token polarities.
//
// Token kinds:
//   shared       polarity +-1, identical in every task
//   private      owned by one task, polarity +-1 there, neutral elsewhere
//   conflicting  owned by two neighbouring tasks (k, k+1 mod K) with
//                opposite polarity in each
//   neutral      polarity 0 everywhere
// A sentence of task k draws each position from shared tokens, k's own
// private pool (including its conflicting tokens), other tasks' private
// pools (contaminants, neutral under k) or neutral filler. Its label is the
// sign of the summed polarity under k's map; ties are resampled, and labels
// alternate so classes are exactly balanced before noise.
struct SynthSpec {
  std::size_t tasks = 4;
  std::size_t shared_tokens = 60;
  std::size_t private_tokens = 30;      // per task
  std::size_t conflicting_tokens = 6;   // per neighbouring task pair
  std::size_t neutral_tokens = 40;
  std::size_t min_length = 6;
  std::size_t max_length = 12;
  double shared_rate = 0.25;
  double private_rate = 0.25;
  double contaminant_rate = 0.2;
  double label_noise = 0.0;
  std::size_t sentences_per_task = 2000;
  std::size_t unlabeled_per_task = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

SynthSpec parse_synth_spec(std::istream& in);
SynthSpec load_synth_spec(const std::filesystem::path& path);
void write_synth_spec(std::ostream& out, const SynthSpec& spec);

enum class TokenKind { Shared, Private, Conflicting, Neutral };
std::string to_string(TokenKind k);

struct TokenInfo {
  std::string token;
  TokenKind kind;
  int owner = -1;      // owning task for private tokens, -1 otherwise
  int polarity = 0;    // polarity under `owner` (or global for shared)
};

struct SynthCorpus {
  Corpus corpus;
  // Labeled sentences per task in generation order, before partitioning.
  std::vector<std::vector<Example>> labeled;
  // Provenance rows `token, kind, task, polarity`; conflicting tokens get one
  // row per owning task, shared and neutral tokens one row with task "*".
  std::vector<TokenInfo> provenance;
  // polarity[k][token] under task k's map (tokens absent are neutral)
  std::vector<std::map<std::string, int>> polarity;

  // Label a sentence under task k's map: sign of the summed polarity.
  // Returns -1 on a tie.
  int label(std::size_t task, const std::vector<std::string>& tokens) const;
};

// Labeled sentences are partitioned 70/20/10 with `spec.seed`, the same
// seed load_corpus must be given to reproduce the split from disk.
SynthCorpus generate_synthetic(const SynthSpec& spec);

// `<root>/<task>/labeled`, `<root>/<task>/unlabeled`, `<root>/provenance.tsv`
// and `<root>/spec.txt`.
void write_synthetic(const std::filesystem::path& root, const SynthCorpus& synth, const SynthSpec& spec);

}  // namespace aspmtl
