#include "kvmt/task.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "kvmt/model.hpp"

namespace kvmt {

TokenSeq SyntheticTask::translate(const TokenSeq& source) const {
  TokenSeq out(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const TokenId x = source[source.size() - 1 - i];
    if (x >= sigma.size()) throw InvalidArgument("translate: token out of vocabulary");
    out[i] = sigma[x];
  }
  return out;
}

SyntheticTask make_task(std::uint64_t seed, const TaskConfig& config) {
  if (config.symbols < 2 || config.min_len == 0 || config.min_len > config.max_len)
    throw InvalidArgument("make_task: invalid configuration");
  SyntheticTask task;
  task.seed = seed;
  task.config = config;
  Rng rng(mix_seed(seed, 1));

  std::vector<TokenId> symbols(config.symbols);
  std::iota(symbols.begin(), symbols.end(), kFirstSymbol);
  std::vector<TokenId> shuffled = symbols;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  task.sigma.resize(task.vocab_size());
  task.sigma[kBos] = kBos;
  task.sigma[kEos] = kEos;
  for (std::size_t i = 0; i < symbols.size(); ++i) task.sigma[symbols[i]] = shuffled[i];

  std::uniform_int_distribution<std::size_t> len_dist(config.min_len, config.max_len);
  std::uniform_int_distribution<TokenId> sym_dist(kFirstSymbol, static_cast<TokenId>(kFirstSymbol + config.symbols - 1));
  std::set<TokenSeq> seen;
  auto fill = [&](Corpus& split, std::size_t n) {
    while (split.size() < n) {
      TokenSeq src(len_dist(rng));
      for (auto& x : src) x = sym_dist(rng);
      if (!seen.insert(src).second) continue;
      TokenSeq tgt = task.translate(src);
      split.push_back({std::move(src), std::move(tgt)});
    }
  };
  fill(task.train, config.train_size);
  fill(task.valid, config.valid_size);
  fill(task.test, config.test_size);
  return task;
}

std::vector<TokenSeq> targets_with_eos(const Corpus& corpus) {
  std::vector<TokenSeq> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus) {
    out.push_back(p.target);
    out.back().push_back(kEos);
  }
  return out;
}

std::vector<ContrastiveItem> make_contrastive_items(const SyntheticTask& task, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 7));
  std::uniform_int_distribution<TokenId> other(1, static_cast<TokenId>(task.config.symbols - 1));
  std::vector<ContrastiveItem> items;
  for (const auto& p : task.test) {
    ContrastiveItem item{p.source, p.target, {}};
    TokenSeq variant = p.target;
    const std::size_t pos = std::uniform_int_distribution<std::size_t>(0, variant.size() - 1)(rng);
    // Shift within the symbol range so the replacement always differs.
    const TokenId sym = variant[pos] - kFirstSymbol;
    variant[pos] = kFirstSymbol + static_cast<TokenId>((sym + other(rng)) % task.config.symbols);
    item.contrastive.push_back(std::move(variant));
    items.push_back(std::move(item));
  }
  return items;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& p : corpus) out << format_token_ids(p.source) << '\t' << format_token_ids(p.target) << '\n';
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": expected source<TAB>target");
    corpus.push_back({parse_token_ids(line.substr(0, tab)), parse_token_ids(line.substr(tab + 1))});
  }
  return corpus;
}

void save_task(const SyntheticTask& task, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["seed"] = task.seed;
  j["symbols"] = task.config.symbols;
  j["min_len"] = task.config.min_len;
  j["max_len"] = task.config.max_len;
  j["sigma"] = task.sigma;
  std::ofstream meta(dir / "task.json", std::ios::trunc);
  if (!meta) throw std::runtime_error("cannot open for writing: " + (dir / "task.json").string());
  meta << j.dump(2) << '\n';
  meta.close();
  write_corpus(task.train, dir / "train.txt");
  write_corpus(task.valid, dir / "valid.txt");
  write_corpus(task.test, dir / "test.txt");
  write_contrastive_items(make_contrastive_items(task, task.seed), dir / "contrastive.jsonl");
}

SyntheticTask load_task(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "task.json");
  if (!meta) throw std::runtime_error("cannot open for reading: " + (dir / "task.json").string());
  SyntheticTask task;
  try {
    const auto j = nlohmann::json::parse(meta);
    task.seed = j.at("seed").get<std::uint64_t>();
    task.config.symbols = j.at("symbols").get<std::size_t>();
    task.config.min_len = j.at("min_len").get<std::size_t>();
    task.config.max_len = j.at("max_len").get<std::size_t>();
    task.sigma = j.at("sigma").get<std::vector<TokenId>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("task.json: " + std::string(e.what()));
  }
  if (task.sigma.size() != task.vocab_size()) throw InvalidArgument("task.json: sigma size mismatch");
  task.train = read_corpus(dir / "train.txt");
  task.valid = read_corpus(dir / "valid.txt");
  task.test = read_corpus(dir / "test.txt");
  task.config.train_size = task.train.size();
  task.config.valid_size = task.valid.size();
  task.config.test_size = task.test.size();
  return task;
}

}  // namespace kvmt
