#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "kvmt/datastore.hpp"
#include "kvmt/linalg.hpp"

namespace kvmt {

inline constexpr std::size_t kPqCentroids = 256;

struct IndexConfig {
  bool use_pca = false;
  std::size_t pca_dim = 0;
  /// 0 selects default_nlist(N).
  std::size_t nlist = 0;
  /// Subquantizer count; 0 builds a flat (uncompressed) IVF index.
  std::size_t pq_m = 0;
  Metric metric = Metric::kL2;
  bool keep_raw_keys = true;
  std::size_t pca_sample_cap = 100000;
  std::size_t kmeans_iters = 25;
};

/// round(sqrt(n)) clamped to [1, 4096].
std::size_t default_nlist(std::size_t n);

struct SearchParams {
  std::size_t k = 8;
  /// 0 selects max(1, nlist / 8).
  std::size_t nprobe = 0;
  /// Re-score a shortlist of k·rerank_factor candidates with exact distances
  /// on the retained raw keys.
  bool rerank = false;
  std::size_t rerank_factor = 4;
};

/// Inverted-file index with optional PCA front-end and product-quantized
/// residual codes (IVF-ADC). All trained parameters are held at f32 precision
/// so a serialized index reproduces search results exactly.
class IvfPqIndex {
 public:
  struct InvertedList {
    std::vector<EntryId> ids;
    std::vector<std::uint8_t> codes;  // ids.size() × m, PQ only
    std::vector<float> vectors;       // ids.size() × dim, flat only

    bool operator==(const InvertedList&) const = default;
  };

  std::size_t input_dim() const { return input_dim_; }
  std::size_t dim() const { return dim_; }
  std::size_t nlist() const { return nlist_; }
  std::size_t pq_m() const { return pq_m_; }
  std::size_t size() const { return values_.size(); }
  bool has_pca() const { return pca_.has_value(); }
  bool has_pq() const { return pq_m_ > 0; }
  bool has_raw_keys() const { return raw_retained_; }
  Metric metric() const { return metric_; }
  const std::optional<PcaModel>& pca() const { return pca_; }
  const std::vector<InvertedList>& lists() const { return lists_; }
  const std::vector<float>& coarse_centroids() const { return centroids_; }
  TokenId value(EntryId id) const { return values_[id]; }

  std::size_t default_nprobe() const { return std::max<std::size_t>(1, nlist_ / 8); }

  /// Query mapped into index space: normalized for the cosine metric, then
  /// PCA-projected when configured.
  std::vector<float> transform(std::span<const float> query) const;

  /// m × 256 table of squared distances between each subvector of `x`
  /// (index space) and each codebook centroid.
  Matrix adc_table(std::span<const float> x) const;

  /// Index-space reconstruction of an entry: its coarse centroid plus the
  /// decoded residual (or the stored vector for flat lists).
  std::vector<float> reconstruct(EntryId id) const;

  NeighborSet search(std::span<const float> query, const SearchParams& params) const;

  /// The datastore of retained raw keys, if kept.
  std::optional<RawDatastore> raw_datastore() const;

  bool operator==(const IvfPqIndex&) const = default;

 private:
  friend IvfPqIndex train_index(const RawDatastore&, const IndexConfig&, std::uint64_t);
  friend std::vector<unsigned char> encode_index(const IvfPqIndex&);
  friend IvfPqIndex decode_index(std::vector<unsigned char>);

  void build_locator();
  void compute_table(std::span<const float> x, std::vector<float>& table) const;

  std::size_t input_dim_ = 0;
  std::size_t dim_ = 0;
  std::size_t nlist_ = 0;
  std::size_t pq_m_ = 0;
  Metric metric_ = Metric::kL2;
  std::optional<PcaModel> pca_;
  std::vector<float> centroids_;  // nlist × dim
  std::vector<float> codebooks_;  // m × 256 × (dim / m)
  std::vector<InvertedList> lists_;
  std::vector<TokenId> values_;
  bool raw_retained_ = false;
  std::vector<float> raw_keys_;  // N × input_dim when retained
  std::vector<std::pair<std::uint32_t, std::uint64_t>> locator_;  // id -> (list, offset)
};

IvfPqIndex train_index(const RawDatastore& ds, const IndexConfig& config, std::uint64_t seed);

/// KVDS-IDX, little-endian: "KVDI", u32 version=1, u32 flags (bit0 pca, bit1 pq,
/// bit2 raw keys retained, bit3 cosine metric), u32 input_dim, u32 dim,
/// u32 nlist, u32 m, u64 count; PCA block (mean, components, explained
/// variance); coarse centroids; codebooks; per list u64 length, ids (u64) and
/// codes (u8) or vectors (f32); values (u32); raw keys (f32). Floats are f32.
std::vector<unsigned char> encode_index(const IvfPqIndex& index);
IvfPqIndex decode_index(std::vector<unsigned char> bytes);
void write_index(const IvfPqIndex& index, const std::filesystem::path& path);
IvfPqIndex read_index(const std::filesystem::path& path);

class IndexSearcher final : public Searcher {
 public:
  IndexSearcher(const IvfPqIndex& index, SearchParams params) : index_(index), params_(params) {}
  NeighborSet search(std::span<const float> query, std::size_t k) const override {
    SearchParams p = params_;
    p.k = k;
    return index_.search(query, p);
  }
  std::size_t dim() const override { return index_.input_dim(); }
  std::size_t size() const override { return index_.size(); }

 private:
  const IvfPqIndex& index_;
  SearchParams params_;
};

}  // namespace kvmt
