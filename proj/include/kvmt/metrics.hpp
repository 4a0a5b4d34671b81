#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kvmt/datastore.hpp"

namespace kvmt {

struct KvConsistencyOptions {
  /// Drop the query entry itself from its neighbor set.
  bool exclude_self = true;
  /// Evaluate a seeded sample of at most this many entries; 0 = all.
  std::size_t sample_cap = 0;
  std::uint64_t seed = 0;
};

/// Fraction of each key's k neighbors (found through `searcher`, which must
/// index `ds`) that share its value, averaged over the entries.
double kv_consistency(const RawDatastore& ds, const Searcher& searcher, std::size_t k,
                      const KvConsistencyOptions& options = {});

/// Mean cosine over aligned (query, key) pairs.
double qk_consistency(std::span<const std::vector<float>> queries,
                      std::span<const std::vector<float>> keys);

/// Mean fraction of the k retrieved values equal to each query's gold value.
double retrieval_accuracy(std::span<const std::vector<float>> queries, std::span<const TokenId> gold,
                          const Searcher& searcher, std::size_t k);

struct ProjectedPoint {
  double x = 0;
  double y = 0;
  TokenId label = 0;
};

/// 2-D PCA projection for plotting. One-dimensional input is zero-padded on
/// the second axis.
std::vector<ProjectedPoint> project_2d(std::span<const std::vector<float>> vectors,
                                       std::span<const TokenId> labels);

/// `x<TAB>y<TAB>label` rows.
void write_projection_tsv(const std::vector<ProjectedPoint>& points, const std::filesystem::path& path);

struct ContrastiveItem {
  TokenSeq source;
  TokenSeq reference;
  std::vector<TokenSeq> contrastive;
};

struct ContrastiveResult {
  double accuracy = 0;
  std::size_t passed = 0;
  std::size_t total = 0;
  std::vector<bool> item_passed;
};

using SequenceScorer = std::function<double(const TokenSeq& source, const TokenSeq& candidate)>;

/// An item passes iff the reference scores strictly higher than every
/// contrastive variant.
ContrastiveResult contrastive_eval(const SequenceScorer& scorer, std::span<const ContrastiveItem> items);

/// Line-JSON items: {"source": "ids", "reference": "ids", "contrastive": ["ids", ...]}
/// with space-separated token ids.
std::vector<ContrastiveItem> read_contrastive_items(const std::filesystem::path& path);
void write_contrastive_items(std::span<const ContrastiveItem> items, const std::filesystem::path& path);

TokenSeq parse_token_ids(const std::string& text);
std::string format_token_ids(std::span<const TokenId> tokens);

/// Ordered `name<TAB>value` report.
class MetricReport {
 public:
  void add(std::string name, double value) { rows_.emplace_back(std::move(name), value); }
  const std::vector<std::pair<std::string, double>>& rows() const { return rows_; }
  std::string to_tsv() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, double>> rows_;
};

/// Fixed six-decimal rendering used by every TSV report.
std::string format_value(double v);

}  // namespace kvmt
