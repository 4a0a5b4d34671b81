#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "helpers.hpp"
#include "kvmt/model.hpp"
#include "kvmt/task.hpp"

using namespace kvmt;

TEST_CASE("make_task is a pure function of the seed") {
  const SyntheticTask a = make_task(3);
  CHECK(a == make_task(3));
  CHECK_FALSE(a.train == make_task(4).train);
  CHECK(a.train.size() == 2000);
  CHECK(a.valid.size() == 200);
  CHECK(a.test.size() == 200);
  CHECK(a.vocab_size() == 42);
}

TEST_CASE("sigma is a permutation of the symbols that fixes BOS and EOS") {
  const SyntheticTask t = make_task(0);
  REQUIRE(t.sigma.size() == 42);
  CHECK(t.sigma[kBos] == kBos);
  CHECK(t.sigma[kEos] == kEos);
  std::set<TokenId> image(t.sigma.begin() + kFirstSymbol, t.sigma.end());
  CHECK(image.size() == 40);
  CHECK(*image.begin() == kFirstSymbol);
  CHECK(*image.rbegin() == 41);
}

TEST_CASE("targets reverse and relabel their sources") {
  const SyntheticTask t = make_task(1);
  for (const Corpus* split : {&t.train, &t.valid, &t.test})
    for (const auto& p : *split) {
      REQUIRE(p.target.size() == p.source.size());
      CHECK(p.source.size() >= 4);
      CHECK(p.source.size() <= 10);
      for (std::size_t i = 0; i < p.source.size(); ++i) {
        CHECK(p.source[i] >= kFirstSymbol);
        CHECK(p.target[i] == t.sigma[p.source[p.source.size() - 1 - i]]);
      }
    }
  CHECK(t.translate(TokenSeq{2, 3}) == TokenSeq{t.sigma[3], t.sigma[2]});
  CHECK_THROWS_AS(t.translate(TokenSeq{42}), InvalidArgument);
}

TEST_CASE("splits are disjoint and every symbol is well covered") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const SyntheticTask t = make_task(seed);
    std::set<TokenSeq> train;
    for (const auto& p : t.train) train.insert(p.source);
    CHECK(train.size() == t.train.size());
    std::set<TokenSeq> valid;
    for (const auto& p : t.valid) {
      CHECK(train.count(p.source) == 0);
      valid.insert(p.source);
    }
    for (const auto& p : t.test) {
      CHECK(train.count(p.source) == 0);
      CHECK(valid.count(p.source) == 0);
    }
    std::map<TokenId, std::size_t> count;
    for (const auto& p : t.train)
      for (TokenId y : p.target) ++count[y];
    CHECK(count.size() == 40);
    for (const auto& [y, n] : count) CHECK(n >= 10);
  }
}

TEST_CASE("targets_with_eos") {
  const Corpus c = {{{2, 3}, {5, 4}}, {{6}, {7}}};
  CHECK(targets_with_eos(c) == std::vector<TokenSeq>{{5, 4, kEos}, {7, kEos}});
}

TEST_CASE("contrastive items differ from the reference in one symbol") {
  const SyntheticTask t = make_task(2);
  const auto items = make_contrastive_items(t, 2);
  REQUIRE(items.size() == t.test.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    CHECK(items[i].source == t.test[i].source);
    CHECK(items[i].reference == t.test[i].target);
    REQUIRE(items[i].contrastive.size() == 1);
    const TokenSeq& v = items[i].contrastive[0];
    REQUIRE(v.size() == items[i].reference.size());
    std::size_t diff = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      diff += v[j] != items[i].reference[j];
      CHECK(v[j] >= kFirstSymbol);
      CHECK(v[j] < 42);
    }
    CHECK(diff == 1);
  }
}

TEST_CASE("task directories round trip") {
  testing::TempDir dir("task");
  const SyntheticTask t = make_task(5);
  save_task(t, dir.path());
  for (const char* f : {"task.json", "train.txt", "valid.txt", "test.txt", "contrastive.jsonl"})
    CHECK(std::filesystem::exists(dir / f));
  CHECK(load_task(dir.path()) == t);
  CHECK(read_contrastive_items(dir / "contrastive.jsonl").size() == 200);

  std::ifstream in(dir / "train.txt");
  std::string first;
  std::getline(in, first);
  CHECK(first == format_token_ids(t.train[0].source) + "\t" + format_token_ids(t.train[0].target));
}

TEST_CASE("corpus and task errors") {
  testing::TempDir dir("badtask");
  std::ofstream(dir / "c.txt") << "2 3 4\n";
  CHECK_THROWS_AS(read_corpus(dir / "c.txt"), InvalidArgument);
  std::ofstream(dir / "d.txt") << "2 3\t4 x\n";
  CHECK_THROWS_AS(read_corpus(dir / "d.txt"), InvalidArgument);
  CHECK_THROWS(read_corpus(dir / "missing.txt"));

  TaskConfig bad;
  bad.min_len = 5;
  bad.max_len = 4;
  CHECK_THROWS_AS(make_task(0, bad), InvalidArgument);
  CHECK_THROWS(load_task(dir.path()));
}
