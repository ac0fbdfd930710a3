#include "aspmtl/data.hpp"

#include "aspmtl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace aspmtl {

namespace fs = std::filesystem;

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "dev") return Split::Dev;
  if (text == "test") return Split::Test;
  if (text == "unlabeled") return Split::Unlabeled;
  throw ConfigError("split: expected train, dev, test or unlabeled, got '" + text + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
    case Split::Unlabeled: return "unlabeled";
  }
  return "?";
}

const std::vector<Example>& split_of(const TaskDataset& task, Split s) {
  switch (s) {
    case Split::Train: return task.train;
    case Split::Dev: return task.dev;
    case Split::Test: return task.test;
    case Split::Unlabeled: return task.unlabeled;
  }
  return task.train;
}

const std::vector<Sample>& EncodedTask::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Dev: return dev;
    case Split::Test: return test;
    case Split::Unlabeled: return unlabeled;
  }
  return train;
}

Partition partition(std::size_t n, std::uint64_t seed, const PartitionOptions& opts) {
  if (n < 10) throw InputError("partition: need at least 10 examples, got " + std::to_string(n));
  double dev_frac = opts.dev_fraction, test_frac = opts.test_fraction;
  if (opts.swap_dev_test) std::swap(dev_frac, test_frac);
  if (dev_frac < 0 || test_frac < 0 || dev_frac + test_frac >= 1.0) {
    throw ConfigError("partition: dev and test fractions must be >= 0 and sum below 1");
  }
  const auto n_dev = static_cast<std::size_t>(std::llround(static_cast<double>(n) * dev_frac));
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_frac));
  const std::size_t n_train = n - n_dev - n_test;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Partition p;
  p.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  p.dev.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  p.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), order.end());
  return p;
}

namespace {

std::vector<std::string> tokenize(const std::string& text, std::size_t max_length) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok && out.size() < max_length) out.push_back(tok);
  return out;
}

std::string where(const std::string& source, std::size_t line) { return source + ":" + std::to_string(line); }

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

std::vector<Example> read_labeled(std::istream& in, const std::string& source, std::size_t max_length) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InputError(where(source, lineno) + ": missing label<TAB>text separator");
    if (line.find('\t', tab + 1) != std::string::npos) {
      throw InputError(where(source, lineno) + ": expected 2 tab-separated fields, found more");
    }
    const std::string label_text = line.substr(0, tab);
    Example ex;
    try {
      std::size_t used = 0;
      ex.label = std::stoi(label_text, &used);
      if (used != label_text.size() || ex.label < 0) throw std::invalid_argument("label");
    } catch (const std::exception&) {
      throw InputError(where(source, lineno) + ": label '" + label_text + "' is not a non-negative integer");
    }
    ex.tokens = tokenize(line.substr(tab + 1), max_length);
    if (ex.tokens.empty()) throw InputError(where(source, lineno) + ": empty sentence");
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> read_unlabeled(std::istream& in, const std::string& source, std::size_t max_length) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    const auto tab = line.find('\t');
    if (tab != std::string::npos) line = line.substr(tab + 1);
    Example ex;
    ex.tokens = tokenize(line, max_length);
    if (ex.tokens.empty()) continue;
    out.push_back(std::move(ex));
  }
  (void)source;
  return out;
}

void write_labeled(std::ostream& out, std::span<const Example> examples) {
  for (const auto& ex : examples) {
    out << ex.label << '\t';
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) out << (i ? " " : "") << ex.tokens[i];
    out << '\n';
  }
}

void write_unlabeled(std::ostream& out, std::span<const Example> examples) {
  for (const auto& ex : examples) {
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) out << (i ? " " : "") << ex.tokens[i];
    out << '\n';
  }
}

namespace {

std::vector<Example> read_file(const fs::path& path, bool labeled, std::size_t max_length) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return labeled ? read_labeled(in, path.string(), max_length) : read_unlabeled(in, path.string(), max_length);
}

template <typename T>
std::vector<T> pick(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

void finish_task(TaskDataset& t) {
  if (t.train.empty()) throw InputError("task " + t.name + " has no training examples");
  int max_label = 1;
  for (const auto* split : {&t.train, &t.dev, &t.test}) {
    for (const auto& ex : *split) max_label = std::max(max_label, ex.label);
  }
  t.classes = max_label + 1;
}

TaskDataset load_task_dir(const fs::path& dir, const LoadOptions& opts) {
  TaskDataset t;
  t.name = dir.filename().string();
  const auto ml = opts.max_length;
  if (fs::exists(dir / "train")) {
    t.train = read_file(dir / "train", true, ml);
    if (fs::exists(dir / "dev")) t.dev = read_file(dir / "dev", true, ml);
    if (fs::exists(dir / "test")) t.test = read_file(dir / "test", true, ml);
  } else if (fs::exists(dir / "labeled")) {
    const auto all = read_file(dir / "labeled", true, ml);
    if (all.empty()) throw InputError("task " + t.name + " is empty");
    const Partition p = partition(all.size(), opts.seed, opts.partition);
    t.train = pick(all, p.train);
    t.dev = pick(all, p.dev);
    t.test = pick(all, p.test);
  } else {
    throw InputError("task directory " + dir.string() + " has neither train nor labeled file");
  }
  if (fs::exists(dir / "unlabeled")) t.unlabeled = read_file(dir / "unlabeled", false, ml);
  finish_task(t);
  return t;
}

TaskDataset load_flat_task(const fs::path& root, const std::string& name, const LoadOptions& opts) {
  TaskDataset t;
  t.name = name;
  const auto ml = opts.max_length;
  auto all = read_file(root / (name + ".task.train"), true, ml);
  if (all.empty()) throw InputError("task " + name + " is empty");
  if (all.size() <= opts.carve_dev) throw InputError("task " + name + " too small to carve a dev split");
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = all.size() - opts.carve_dev;
  t.train = pick(all, std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train)));
  t.dev = pick(all, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end()));
  if (fs::exists(root / (name + ".task.test"))) t.test = read_file(root / (name + ".task.test"), true, ml);
  if (fs::exists(root / (name + ".task.unlabel"))) t.unlabeled = read_file(root / (name + ".task.unlabel"), false, ml);
  finish_task(t);
  return t;
}

}  // namespace

Corpus load_corpus(const fs::path& root, const LoadOptions& opts) {
  if (!fs::is_directory(root)) throw IoError("corpus root " + root.string() + " is not a directory");
  std::map<std::string, TaskDataset> tasks;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string fname = entry.path().filename().string();
    if (entry.is_directory()) {
      if (fs::exists(entry.path() / "train") || fs::exists(entry.path() / "labeled")) {
        tasks.emplace(fname, load_task_dir(entry.path(), opts));
      }
    } else if (entry.is_regular_file()) {
      const std::string suffix = ".task.train";
      if (fname.size() > suffix.size() && fname.compare(fname.size() - suffix.size(), suffix.size(), suffix) == 0) {
        const std::string name = fname.substr(0, fname.size() - suffix.size());
        tasks.emplace(name, load_flat_task(root, name, opts));
      }
    }
  }
  if (tasks.empty()) throw InputError("no tasks found under " + root.string());
  Corpus out;
  for (auto& [name, t] : tasks) out.push_back(std::move(t));
  return out;
}

void write_corpus(const fs::path& root, const Corpus& corpus) {
  for (const auto& t : corpus) {
    const fs::path dir = root / t.name;
    fs::create_directories(dir);
    auto write = [&](const char* file, const std::vector<Example>& ex, bool labeled) {
      std::ofstream out(dir / file, std::ios::trunc);
      if (!out) throw IoError("cannot write " + (dir / file).string());
      labeled ? write_labeled(out, ex) : write_unlabeled(out, ex);
    };
    write("train", t.train, true);
    write("dev", t.dev, true);
    write("test", t.test, true);
    if (!t.unlabeled.empty()) write("unlabeled", t.unlabeled, false);
  }
}

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>"} {
  index_.emplace(tokens_[0], kPad);
  index_.emplace(tokens_[1], kUnk);
}

Vocabulary Vocabulary::build(const Corpus& corpus) {
  std::map<std::string, std::size_t> freq;
  for (const auto& t : corpus) {
    for (const auto& ex : t.train) {
      for (const auto& tok : ex.tokens) ++freq[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> ordered;
  ordered.reserve(items.size());
  for (auto& [tok, n] : items) ordered.push_back(tok);
  return from_tokens(ordered);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& ordered) {
  Vocabulary v;
  for (const auto& tok : ordered) {
    if (v.index_.count(tok)) continue;
    v.index_.emplace(tok, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(tok);
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<EncodedTask> encode_corpus(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<EncodedTask> out;
  for (const auto& t : corpus) {
    EncodedTask e;
    e.name = t.name;
    e.classes = t.classes;
    auto enc = [&](const std::vector<Example>& src, std::vector<Sample>& dst) {
      dst.reserve(src.size());
      for (const auto& ex : src) dst.push_back(Sample{vocab.encode(ex.tokens), ex.label});
    };
    enc(t.train, e.train);
    enc(t.dev, e.dev);
    enc(t.test, e.test);
    enc(t.unlabeled, e.unlabeled);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Batch> make_batches(const EncodedTask& data, std::size_t task, std::size_t epoch, const BatchOptions& opts) {
  if (opts.size < 1) throw ConfigError("batch size must be >= 1");
  std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                    static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> pool(data.unlabeled.size());
  std::iota(pool.begin(), pool.end(), 0);
  const bool with_unlabeled = opts.include_unlabeled && !pool.empty() && opts.unlabeled_ratio > 0;
  if (with_unlabeled) std::shuffle(pool.begin(), pool.end(), rng);
  std::size_t cursor = 0;

  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += opts.size) {
    Batch b;
    b.task = task;
    const std::size_t end = std::min(order.size(), start + opts.size);
    for (std::size_t i = start; i < end; ++i) b.samples.push_back(&data.train[order[i]]);
    out.push_back(std::move(b));
    if (!with_unlabeled) continue;
    for (std::size_t r = 0; r < opts.unlabeled_ratio; ++r) {
      Batch u;
      u.task = task;
      u.unlabeled = true;
      for (std::size_t i = 0; i < opts.size; ++i) {
        u.samples.push_back(&data.unlabeled[pool[cursor]]);
        cursor = (cursor + 1) % pool.size();
      }
      out.push_back(std::move(u));
    }
  }
  return out;
}

}  // namespace aspmtl
