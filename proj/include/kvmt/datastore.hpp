#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kvmt/linalg.hpp"

namespace kvmt {

using TokenId = std::uint32_t;
using EntryId = std::uint64_t;
using TokenSeq = std::vector<TokenId>;

/// How the producing model computed its states. The tag is recorded in the
/// KVDS-RAW header; the pairing arithmetic is the same for all of them.
enum class AlignmentStrategy : std::uint8_t { kMlm = 0, kDae = 1, kClm = 2, kOther = 3 };

std::string to_string(AlignmentStrategy s);
AlignmentStrategy parse_strategy(const std::string& name);

/// kL2 is squared Euclidean distance; kCosine is 1 − cos(a, b).
enum class Metric { kL2, kCosine };

std::string to_string(Metric m);
Metric parse_metric(const std::string& name);

double metric_distance(Metric metric, std::span<const float> a, std::span<const float> b);

struct Entry {
  std::vector<float> key;
  TokenId value = 0;
};

struct Neighbor {
  EntryId id = 0;
  TokenId value = 0;
  double distance = 0.0;

  bool operator==(const Neighbor&) const = default;
};

/// Ascending by (distance, id).
using NeighborSet = std::vector<Neighbor>;

inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

/// Bounded max-heap that keeps the k smallest neighbors by (distance, id).
class NeighborHeap {
 public:
  explicit NeighborHeap(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  /// Distance a candidate must beat (or tie with a smaller id) to be kept.
  bool accepts(double distance, EntryId id) const {
    if (heap_.size() < k_) return true;
    const Neighbor& worst = heap_.front();
    return distance < worst.distance || (distance == worst.distance && id < worst.id);
  }

  void push(const Neighbor& n);
  /// Sorted ascending; leaves the heap empty.
  NeighborSet take_sorted();

 private:
  std::size_t k_;
  std::vector<Neighbor> heap_;
};

/// Token-level key/value store. Entry ids are insertion positions.
class RawDatastore {
 public:
  explicit RawDatastore(std::size_t dim, AlignmentStrategy strategy = AlignmentStrategy::kOther,
                        std::string source_label = {});

  void add(std::span<const float> key, TokenId value);
  void add(const Entry& e) { add(e.key, e.value); }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<const float> key(EntryId id) const { return {keys_.data() + id * dim_, dim_}; }
  TokenId value(EntryId id) const { return values_[id]; }
  const std::vector<float>& keys() const { return keys_; }
  const std::vector<TokenId>& values() const { return values_; }

  AlignmentStrategy strategy() const { return strategy_; }
  const std::string& source_label() const { return source_label_; }
  void set_source_label(std::string label) { source_label_ = std::move(label); }

  bool operator==(const RawDatastore& o) const {
    return dim_ == o.dim_ && strategy_ == o.strategy_ && keys_ == o.keys_ && values_ == o.values_;
  }

 private:
  std::size_t dim_;
  AlignmentStrategy strategy_;
  std::string source_label_;
  std::vector<float> keys_;
  std::vector<TokenId> values_;
};

/// Anything that answers k-nearest-neighbor queries over a datastore.
class Searcher {
 public:
  virtual ~Searcher() = default;
  virtual NeighborSet search(std::span<const float> query, std::size_t k) const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t size() const = 0;
};

/// Pairs states[t] with tokens[t]. For DAE/CLM the caller guarantees states[t]
/// was computed from the prefix tokens[0..t-1] (states[0] is the
/// begin-of-sequence state); for MLM from the whole sentence.
std::vector<Entry> align_states_to_pairs(std::span<const std::vector<float>> states,
                                         std::span<const TokenId> tokens,
                                         AlignmentStrategy strategy);

RawDatastore make_datastore(std::size_t dim, std::span<const Entry> entries,
                            AlignmentStrategy strategy = AlignmentStrategy::kOther);

/// Brute-force k nearest entries, ties broken by entry id.
NeighborSet exact_search(const RawDatastore& ds, std::span<const float> query, std::size_t k,
                         Metric metric = Metric::kL2);

class ExactSearcher final : public Searcher {
 public:
  ExactSearcher(const RawDatastore& ds, Metric metric = Metric::kL2) : ds_(ds), metric_(metric) {}
  NeighborSet search(std::span<const float> query, std::size_t k) const override {
    return exact_search(ds_, query, k, metric_);
  }
  std::size_t dim() const override { return ds_.dim(); }
  std::size_t size() const override { return ds_.size(); }
  const RawDatastore& datastore() const { return ds_; }

 private:
  const RawDatastore& ds_;
  Metric metric_;
};

/// KVDS-RAW: "KVDR", u32 version=1, u32 dim, u64 count, u8 strategy, 7 reserved
/// bytes, then count × (dim × f32 key, u32 value). Little-endian.
void write_raw(const RawDatastore& ds, const std::filesystem::path& path);
RawDatastore read_raw(const std::filesystem::path& path);
std::vector<unsigned char> encode_raw(const RawDatastore& ds);
RawDatastore decode_raw(std::vector<unsigned char> bytes);

/// Unit-norm random codebook, one row per token. Rows are drawn in order from
/// one stream, so row y does not depend on vocab_size.
Matrix oracle_codebook(std::size_t vocab_size, std::size_t dim, std::uint64_t seed);

/// Synthetic datastore whose key/value consistency is controlled by epsilon:
/// key = normalize(C[y] + epsilon·g), value = y, for every token of every
/// sequence in order.
RawDatastore generate_oracle_datastore(const std::vector<TokenSeq>& corpus, std::size_t dim,
                                       double epsilon, std::uint64_t seed);

}  // namespace kvmt
