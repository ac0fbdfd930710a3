#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace aspmtl {

struct Example {
  std::vector<std::string> tokens;
  int label = -1;  // -1 for unlabeled text
};

struct TaskDataset {
  std::string name;
  int classes = 2;
  std::vector<Example> train, dev, test, unlabeled;

  std::size_t labeled_size() const { return train.size() + dev.size() + test.size(); }
};

// Tasks in lexicographic name order; the position is the task index.
using Corpus = std::vector<TaskDataset>;

enum class Split { Train, Dev, Test, Unlabeled };
Split parse_split(const std::string& text);
std::string to_string(Split s);
const std::vector<Example>& split_of(const TaskDataset& task, Split s);

struct PartitionOptions {
  double dev_fraction = 0.2;
  double test_fraction = 0.1;
  bool swap_dev_test = false;  // exchange the dev and test fractions
};

struct Partition {
  std::vector<std::size_t> train, dev, test;
};

// Seeded permutation then contiguous cuts. dev = round(n * dev_fraction),
// test = round(n * test_fraction), train takes the remainder. Throws
// InputError for fewer than 10 examples.
Partition partition(std::size_t n, std::uint64_t seed, const PartitionOptions& opts = {});

inline constexpr std::size_t kDefaultMaxLength = 500;

struct LoadOptions {
  std::uint64_t seed = 1;  // partition seed for unsplit tasks
  PartitionOptions partition;
  std::size_t max_length = kDefaultMaxLength;  // longer sentences are truncated
  // Dev examples carved from the train file of the `<task>.task.train`
  // distribution layout, which ships only train/test/unlabel files.
  std::size_t carve_dev = 200;
};

// Line format: `label<TAB>tokens separated by spaces`. Throws InputError
// naming `source` and the 1-based line on malformed input.
std::vector<Example> read_labeled(std::istream& in, const std::string& source, std::size_t max_length = kDefaultMaxLength);
// One sentence per line; a leading `label<TAB>` field is tolerated and ignored.
std::vector<Example> read_unlabeled(std::istream& in, const std::string& source, std::size_t max_length = kDefaultMaxLength);
void write_labeled(std::ostream& out, std::span<const Example> examples);
void write_unlabeled(std::ostream& out, std::span<const Example> examples);

// Supported layouts under `root`, per task:
//   <task>/train, <task>/dev, <task>/test [, <task>/unlabeled]   pre-split
//   <task>/labeled [, <task>/unlabeled]                          partitioned here
//   <task>.task.train, <task>.task.test [, <task>.task.unlabel]  flat distribution
Corpus load_corpus(const std::filesystem::path& root, const LoadOptions& opts = {});

// Writes `<root>/<task>/{train,dev,test,unlabeled}`.
void write_corpus(const std::filesystem::path& root, const Corpus& corpus);

// Token ids: 0 is padding, 1 is UNK, then tokens by descending training
// frequency with ties in byte order.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary();
  // Built over the training splits of every task only.
  static Vocabulary build(const Corpus& corpus);
  static Vocabulary from_tokens(const std::vector<std::string>& ordered);

  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::unordered_map<std::string, int>& index() const { return index_; }
  std::vector<int> encode(std::span<const std::string> tokens) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct Sample {
  std::vector<int> ids;
  int label = -1;
};

struct EncodedTask {
  std::string name;
  int classes = 2;
  std::vector<Sample> train, dev, test, unlabeled;

  const std::vector<Sample>& split(Split s) const;
};

std::vector<EncodedTask> encode_corpus(const Corpus& corpus, const Vocabulary& vocab);

struct Batch {
  std::size_t task = 0;
  std::vector<const Sample*> samples;
  bool unlabeled = false;
};

struct BatchOptions {
  std::size_t size = 16;
  std::uint64_t seed = 1;
  bool include_unlabeled = false;
  // Unlabeled batches inserted after each labeled batch.
  std::size_t unlabeled_ratio = 1;
};

// One epoch of batches for a task. Labeled training samples are shuffled with
// a seed derived from (seed, task, epoch) and cut into batches of `size`
// (last one short). With unlabeled data enabled, `unlabeled_ratio` unlabeled
// batches follow each labeled batch, drawn from a shuffled unlabeled pool
// that wraps around when exhausted.
std::vector<Batch> make_batches(const EncodedTask& data, std::size_t task, std::size_t epoch, const BatchOptions& opts);

}  // namespace aspmtl
