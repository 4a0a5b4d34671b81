#include "kvmt/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace kvmt {

double kv_consistency(const RawDatastore& ds, const Searcher& searcher, std::size_t k,
                      const KvConsistencyOptions& options) {
  if (k == 0) throw InvalidArgument("kv_consistency: k must be >= 1");
  if (k >= ds.size()) throw InvalidArgument("kv_consistency: k must be smaller than the datastore");
  if (searcher.size() != ds.size()) throw InvalidArgument("kv_consistency: searcher does not index ds");

  std::vector<EntryId> queries(ds.size());
  std::iota(queries.begin(), queries.end(), EntryId{0});
  if (options.sample_cap > 0 && options.sample_cap < queries.size()) {
    Rng rng(options.seed);
    std::shuffle(queries.begin(), queries.end(), rng);
    queries.resize(options.sample_cap);
    std::sort(queries.begin(), queries.end());
  }

  std::size_t hits = 0;
  for (EntryId q : queries) {
    NeighborSet nb = searcher.search(ds.key(q), options.exclude_self ? k + 1 : k);
    if (options.exclude_self) {
      auto self = std::find_if(nb.begin(), nb.end(), [q](const Neighbor& n) { return n.id == q; });
      if (self != nb.end()) nb.erase(self);
    }
    if (nb.size() > k) nb.resize(k);
    for (const Neighbor& n : nb) hits += (n.value == ds.value(q));
  }
  return static_cast<double>(hits) / (static_cast<double>(queries.size()) * static_cast<double>(k));
}

double qk_consistency(std::span<const std::vector<float>> queries,
                      std::span<const std::vector<float>> keys) {
  if (queries.size() != keys.size()) throw InvalidArgument("qk_consistency: length mismatch");
  if (queries.empty()) throw InvalidArgument("qk_consistency: no pairs");
  double s = 0;
  for (std::size_t i = 0; i < queries.size(); ++i)
    s += cosine(std::span<const float>(queries[i]), std::span<const float>(keys[i]));
  return s / static_cast<double>(queries.size());
}

double retrieval_accuracy(std::span<const std::vector<float>> queries, std::span<const TokenId> gold,
                          const Searcher& searcher, std::size_t k) {
  if (queries.size() != gold.size()) throw InvalidArgument("retrieval_accuracy: length mismatch");
  if (queries.empty()) throw InvalidArgument("retrieval_accuracy: no queries");
  if (k == 0) throw InvalidArgument("retrieval_accuracy: k must be >= 1");
  double total = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const NeighborSet nb = searcher.search(queries[i], k);
    std::size_t hits = 0;
    for (const Neighbor& n : nb) hits += (n.value == gold[i]);
    total += static_cast<double>(hits) / static_cast<double>(k);
  }
  return total / static_cast<double>(queries.size());
}

std::vector<ProjectedPoint> project_2d(std::span<const std::vector<float>> vectors,
                                       std::span<const TokenId> labels) {
  if (vectors.size() < 2) throw InvalidArgument("project_2d: need at least two vectors");
  if (labels.size() != vectors.size()) throw InvalidArgument("project_2d: label count mismatch");
  const std::size_t dim = vectors.front().size();
  if (dim == 0) throw InvalidArgument("project_2d: empty vectors");

  Matrix data(vectors.size(), std::max<std::size_t>(dim, 2));
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != dim) throw InvalidArgument("project_2d: ragged input");
    std::copy(vectors[i].begin(), vectors[i].end(), data.row(i).begin());
  }
  const PcaModel pca = pca_fit(data, 2);
  std::vector<ProjectedPoint> out(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const Vector p = pca.apply(data.row(i));
    out[i] = {p[0], p[1], labels[i]};
  }
  return out;
}

void write_projection_tsv(const std::vector<ProjectedPoint>& points, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& p : points) out << format_value(p.x) << '\t' << format_value(p.y) << '\t' << p.label << '\n';
}

ContrastiveResult contrastive_eval(const SequenceScorer& scorer, std::span<const ContrastiveItem> items) {
  if (items.empty()) throw InvalidArgument("contrastive_eval: no items");
  ContrastiveResult res;
  res.total = items.size();
  for (const auto& item : items) {
    if (item.contrastive.empty()) throw InvalidArgument("contrastive_eval: item without variants");
    const double ref = scorer(item.source, item.reference);
    bool pass = true;
    for (const auto& variant : item.contrastive) pass = pass && ref > scorer(item.source, variant);
    res.item_passed.push_back(pass);
    res.passed += pass;
  }
  res.accuracy = static_cast<double>(res.passed) / static_cast<double>(res.total);
  return res;
}

TokenSeq parse_token_ids(const std::string& text) {
  TokenSeq out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.front() == '-' || v > 0xFFFFFFFFul)
      throw InvalidArgument("invalid token id: " + tok);
    out.push_back(static_cast<TokenId>(v));
  }
  return out;
}

std::string format_token_ids(std::span<const TokenId> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(tokens[i]);
  }
  return s;
}

std::vector<ContrastiveItem> read_contrastive_items(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<ContrastiveItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ContrastiveItem item;
      item.source = parse_token_ids(j.at("source").get<std::string>());
      item.reference = parse_token_ids(j.at("reference").get<std::string>());
      for (const auto& v : j.at("contrastive")) item.contrastive.push_back(parse_token_ids(v.get<std::string>()));
      items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

void write_contrastive_items(std::span<const ContrastiveItem> items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& item : items) {
    nlohmann::ordered_json j;
    j["source"] = format_token_ids(item.source);
    j["reference"] = format_token_ids(item.reference);
    j["contrastive"] = nlohmann::json::array();
    for (const auto& v : item.contrastive) j["contrastive"].push_back(format_token_ids(v));
    out << j.dump() << '\n';
  }
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string MetricReport::to_tsv() const {
  std::string s;
  for (const auto& [name, value] : rows_) s += name + '\t' + format_value(value) + '\n';
  return s;
}

void MetricReport::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << to_tsv();
}

}  // namespace kvmt
