#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kvmt/datastore.hpp"
#include "kvmt/metrics.hpp"

namespace kvmt {

struct SentencePair {
  TokenSeq source;
  TokenSeq target;  // without EOS
  bool operator==(const SentencePair&) const = default;
};

using Corpus = std::vector<SentencePair>;

struct TaskConfig {
  std::size_t symbols = 40;
  std::size_t min_len = 4;
  std::size_t max_len = 10;
  std::size_t train_size = 2000;
  std::size_t valid_size = 200;
  std::size_t test_size = 200;
  bool operator==(const TaskConfig&) const = default;
};

/// Reverse-and-relabel toy translation: target[i] = σ(source[L−1−i]).
/// Ids 0 and 1 are BOS and EOS; symbols occupy 2..symbols+1 on both sides.
struct SyntheticTask {
  std::uint64_t seed = 0;
  TaskConfig config;
  std::vector<TokenId> sigma;  // indexed by token id; identity on BOS/EOS
  Corpus train, valid, test;

  std::size_t vocab_size() const { return config.symbols + 2; }
  TokenSeq translate(const TokenSeq& source) const;
  bool operator==(const SyntheticTask&) const = default;
};

SyntheticTask make_task(std::uint64_t seed, const TaskConfig& config = {});

/// Target sequences each followed by EOS, i.e. the token stream the decoder predicts.
std::vector<TokenSeq> targets_with_eos(const Corpus& corpus);

/// Test items whose single variant replaces one reference token by another symbol.
std::vector<ContrastiveItem> make_contrastive_items(const SyntheticTask& task, std::uint64_t seed);

/// Directory layout: task.json, train.txt, valid.txt, test.txt ("src ids<TAB>tgt ids"), contrastive.jsonl.
void save_task(const SyntheticTask& task, const std::filesystem::path& dir);
SyntheticTask load_task(const std::filesystem::path& dir);

Corpus read_corpus(const std::filesystem::path& path);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

}  // namespace kvmt
