#include "doctest.h"

#include "aspmtl/data.hpp"
#include "aspmtl/errors.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace aspmtl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("aspmtl_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<Example> toy(std::size_t n, const std::string& prefix) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(Example{{prefix + std::to_string(i % 7), "w" + std::to_string(i % 3), "end"}, static_cast<int>(i % 2)});
  }
  return out;
}

}  // namespace

TEST_CASE("partition sizes") {
  struct Case {
    std::size_t n, train, dev, test;
  };
  for (auto c : {Case{100, 70, 20, 10}, Case{101, 71, 20, 10}, Case{999, 699, 200, 100}, Case{2000, 1400, 400, 200}}) {
    Partition p = partition(c.n, 3);
    CHECK(p.train.size() == c.train);
    CHECK(p.dev.size() == c.dev);
    CHECK(p.test.size() == c.test);
  }
  CHECK_THROWS_AS(partition(9, 1), InputError);
}

TEST_CASE("partition is a deterministic disjoint cover") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t n = 10 + seed * 37;
    Partition a = partition(n, seed), b = partition(n, seed);
    CHECK(a.train == b.train);
    CHECK(a.dev == b.dev);
    std::set<std::size_t> all(a.train.begin(), a.train.end());
    all.insert(a.dev.begin(), a.dev.end());
    all.insert(a.test.begin(), a.test.end());
    CHECK(all.size() == n);
    CHECK(a.train.size() + a.dev.size() + a.test.size() == n);
    CHECK(*all.rbegin() == n - 1);
  }
  CHECK(partition(100, 1).train != partition(100, 2).train);
}

TEST_CASE("labeled reader") {
  std::istringstream in("1\tgood movie\n0\tbad  film here\r\n1\tok\n0\ta b\n1\tc\n0\td\n1\te\n0\tf\n1\tg\n0\th i j\n");
  auto ex = read_labeled(in, "toy");
  REQUIRE(ex.size() == 10);
  CHECK(ex[0].label == 1);
  CHECK(ex[1].tokens == std::vector<std::string>{"bad", "film", "here"});
  CHECK(ex[9].tokens.size() == 3);

  auto fails = [](const std::string& text, const std::string& needle) {
    std::istringstream s(text);
    try {
      read_labeled(s, "f.txt");
    } catch (const InputError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  CHECK(fails("1\tok\n1\tx\ty\n", "f.txt:2"));
  CHECK(fails("1 no tab\n", "f.txt:1"));
  CHECK(fails("pos\tword\n", "f.txt:1"));
  CHECK(fails("1\t   \n", "f.txt:1"));

  std::istringstream long_line("1\t" + std::string(30, 'a') + " b c d e\n");
  CHECK(read_labeled(long_line, "x", 3)[0].tokens.size() == 3);
}

TEST_CASE("unlabeled reader tolerates a label column") {
  std::istringstream in("just words\n1\twith label\n");
  auto ex = read_unlabeled(in, "u");
  REQUIRE(ex.size() == 2);
  CHECK(ex[1].tokens == std::vector<std::string>{"with", "label"});
  CHECK(ex[0].label == -1);
}

TEST_CASE("corpus round trip") {
  Corpus c;
  for (std::string name : {"beta", "alpha"}) {
    TaskDataset t;
    t.name = name;
    t.train = toy(30, name);
    t.dev = toy(8, name);
    t.test = toy(5, name);
    t.unlabeled = toy(6, "u");
    for (auto& e : t.unlabeled) e.label = -1;
    c.push_back(t);
  }
  fs::path root = scratch_dir("roundtrip");
  write_corpus(root, c);
  Corpus back = load_corpus(root);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "alpha");
  for (const auto& t : back) {
    const auto& orig = t.name == "alpha" ? c[1] : c[0];
    CHECK(t.train.size() == 30);
    for (std::size_t i = 0; i < t.train.size(); ++i) {
      CHECK(t.train[i].tokens == orig.train[i].tokens);
      CHECK(t.train[i].label == orig.train[i].label);
    }
    CHECK(t.unlabeled.size() == 6);
  }
  Vocabulary v = Vocabulary::build(c);
  auto a = encode_corpus(c, v), b = encode_corpus(back, v);
  CHECK(a[0].train[3].ids == (b[0].name == a[0].name ? b[0] : b[1]).train[3].ids);
  fs::remove_all(root);
}

TEST_CASE("corpus layouts") {
  fs::path root = scratch_dir("layouts");
  fs::create_directories(root / "whole");
  {
    std::ofstream f(root / "whole" / "labeled");
    write_labeled(f, toy(100, "x"));
  }
  {
    std::ofstream tr(root / "books.task.train");
    write_labeled(tr, toy(260, "b"));
    std::ofstream te(root / "books.task.test");
    write_labeled(te, toy(40, "b"));
    std::ofstream un(root / "books.task.unlabel");
    write_unlabeled(un, toy(20, "b"));
  }
  LoadOptions opts;
  opts.seed = 4;
  Corpus c = load_corpus(root, opts);
  REQUIRE(c.size() == 2);
  CHECK(c[0].name == "books");
  CHECK(c[0].train.size() == 60);
  CHECK(c[0].dev.size() == 200);
  CHECK(c[0].test.size() == 40);
  CHECK(c[0].unlabeled.size() == 20);
  CHECK(c[1].train.size() == 70);
  CHECK(c[1].dev.size() == 20);
  CHECK(c[1].test.size() == 10);

  fs::create_directories(root / "empty");
  std::ofstream(root / "empty" / "labeled").close();
  CHECK_THROWS_AS(load_corpus(root, opts), InputError);
  CHECK_THROWS_AS(load_corpus(root / "missing"), IoError);
  fs::remove_all(root);
}

TEST_CASE("vocabulary") {
  Corpus c(1);
  c[0].name = "t";
  c[0].train = {Example{{"b", "a", "b"}, 0}, Example{{"c", "a", "b"}, 1}};
  c[0].test = {Example{{"zzz", "a"}, 0}};
  Vocabulary v = Vocabulary::build(c);
  CHECK(v.size() == 5);
  CHECK(v.id("b") == 2);
  CHECK(v.id("a") == 3);
  CHECK(v.id("c") == 4);
  CHECK(v.id("zzz") == Vocabulary::kUnk);
  CHECK(v.token(0) == "<pad>");
  auto enc = encode_corpus(c, v);
  CHECK(enc[0].test[0].ids == std::vector<int>{Vocabulary::kUnk, 3});
  CHECK(Vocabulary::from_tokens(v.tokens()).index() == v.index());
}

TEST_CASE("batches") {
  EncodedTask t;
  for (int i = 0; i < 35; ++i) t.train.push_back(Sample{{i + 2}, i % 2});
  for (int i = 0; i < 5; ++i) t.unlabeled.push_back(Sample{{i + 2}, -1});
  BatchOptions o;
  o.size = 16;
  auto b = make_batches(t, 2, 0, o);
  REQUIRE(b.size() == 3);
  CHECK(b[0].samples.size() == 16);
  CHECK(b[1].samples.size() == 16);
  CHECK(b[2].samples.size() == 3);
  CHECK(b[2].task == 2);
  std::set<const Sample*> seen;
  for (const auto& x : b)
    for (auto* s : x.samples) seen.insert(s);
  CHECK(seen.size() == 35);

  auto again = make_batches(t, 2, 0, o);
  CHECK(again[1].samples == b[1].samples);
  CHECK(make_batches(t, 2, 1, o)[0].samples != b[0].samples);

  o.include_unlabeled = true;
  auto mixed = make_batches(t, 0, 0, o);
  REQUIRE(mixed.size() == 6);
  for (std::size_t i = 0; i < mixed.size(); ++i) CHECK(mixed[i].unlabeled == (i % 2 == 1));
  CHECK(mixed[1].samples.size() == 16);

  o.size = 0;
  CHECK_THROWS_AS(make_batches(t, 0, 0, o), ConfigError);
}

TEST_CASE("original corpus counts when present") {
  const char* root = std::getenv("ASPMTL_CORPUS");
  if (!root) return;
  LoadOptions opts;
  Corpus c = load_corpus(root, opts);
  for (const auto& t : c) {
    if (t.name != "books") continue;
    CHECK(t.train.size() == 1400);
    CHECK(t.dev.size() == 200);
    CHECK(t.test.size() == 400);
    CHECK(t.unlabeled.size() == 2000);
  }
}
