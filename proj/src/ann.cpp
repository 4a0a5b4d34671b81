#include "kvmt/ann.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kvmt/binio.hpp"

namespace kvmt {

namespace {

constexpr std::uint32_t kIndexVersion = 1;
constexpr std::uint32_t kFlagPca = 1u << 0;
constexpr std::uint32_t kFlagPq = 1u << 1;
constexpr std::uint32_t kFlagRaw = 1u << 2;
constexpr std::uint32_t kFlagCosine = 1u << 3;

double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

void round_pca(PcaModel& pca) {
  for (double& x : pca.mean) x = round_f32(x);
  for (double& x : pca.components.data()) x = round_f32(x);
  for (double& x : pca.explained_variance) x = round_f32(x);
}

std::vector<float> normalized(std::span<const float> v) {
  const double n = norm(v);
  std::vector<float> out(v.begin(), v.end());
  if (n > 0)
    for (float& x : out) x = static_cast<float>(x / n);
  return out;
}

std::uint32_t nearest_row(const float* x, const std::vector<float>& rows, std::size_t count,
                          std::size_t dim) {
  float best = std::numeric_limits<float>::infinity();
  std::uint32_t arg = 0;
  for (std::size_t c = 0; c < count; ++c) {
    const float d = l2_sq_f32(x, rows.data() + c * dim, dim);
    if (d < best) {
      best = d;
      arg = static_cast<std::uint32_t>(c);
    }
  }
  return arg;
}

}  // namespace

std::size_t default_nlist(std::size_t n) {
  const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return std::clamp<std::size_t>(r, 1, 4096);
}

std::vector<float> IvfPqIndex::transform(std::span<const float> query) const {
  if (query.size() != input_dim_) throw InvalidArgument("index search: query dimension mismatch");
  std::vector<float> q = metric_ == Metric::kCosine ? normalized(query)
                                                    : std::vector<float>(query.begin(), query.end());
  if (pca_) return to_float(pca_->apply(to_double(q)));
  return q;
}

void IvfPqIndex::compute_table(std::span<const float> x, std::vector<float>& table) const {
  const std::size_t dsub = dim_ / pq_m_;
  table.resize(pq_m_ * kPqCentroids);
  for (std::size_t j = 0; j < pq_m_; ++j) {
    const float* sub = x.data() + j * dsub;
    const float* book = codebooks_.data() + j * kPqCentroids * dsub;
    for (std::size_t c = 0; c < kPqCentroids; ++c)
      table[j * kPqCentroids + c] = l2_sq_f32(sub, book + c * dsub, dsub);
  }
}

Matrix IvfPqIndex::adc_table(std::span<const float> x) const {
  if (!has_pq()) throw InvalidArgument("adc_table: index has no product quantizer");
  if (x.size() != dim_) throw InvalidArgument("adc_table: dimension mismatch");
  std::vector<float> table;
  compute_table(x, table);
  Matrix out(pq_m_, kPqCentroids);
  std::copy(table.begin(), table.end(), out.data().begin());
  return out;
}

void IvfPqIndex::build_locator() {
  locator_.assign(values_.size(), {0, 0});
  for (std::uint32_t l = 0; l < lists_.size(); ++l)
    for (std::uint64_t o = 0; o < lists_[l].ids.size(); ++o) locator_[lists_[l].ids[o]] = {l, o};
}

std::vector<float> IvfPqIndex::reconstruct(EntryId id) const {
  if (id >= size()) throw InvalidArgument("reconstruct: entry id out of range");
  const auto [l, o] = locator_[id];
  const InvertedList& list = lists_[l];
  if (!has_pq()) return {list.vectors.begin() + o * dim_, list.vectors.begin() + (o + 1) * dim_};
  const std::size_t dsub = dim_ / pq_m_;
  std::vector<float> out(centroids_.begin() + l * dim_, centroids_.begin() + (l + 1) * dim_);
  for (std::size_t j = 0; j < pq_m_; ++j) {
    const std::uint8_t code = list.codes[o * pq_m_ + j];
    const float* word = codebooks_.data() + (j * kPqCentroids + code) * dsub;
    for (std::size_t t = 0; t < dsub; ++t) out[j * dsub + t] += word[t];
  }
  return out;
}

NeighborSet IvfPqIndex::search(std::span<const float> query, const SearchParams& params) const {
  if (size() == 0) throw InvalidArgument("index search: empty index");
  if (params.k == 0) throw InvalidArgument("index search: k must be >= 1");
  const std::size_t nprobe = params.nprobe == 0 ? default_nprobe() : params.nprobe;
  if (nprobe > nlist_) throw InvalidArgument("index search: nprobe exceeds nlist");
  const std::vector<float> x = transform(query);

  std::vector<std::pair<float, std::uint32_t>> cells(nlist_);
  for (std::uint32_t c = 0; c < nlist_; ++c)
    cells[c] = {l2_sq_f32(x.data(), centroids_.data() + c * dim_, dim_), c};
  std::partial_sort(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(nprobe), cells.end());

  const bool rerank = params.rerank && raw_retained_;
  const std::size_t shortlist = rerank ? params.k * std::max<std::size_t>(1, params.rerank_factor) : params.k;
  NeighborHeap heap(shortlist);
  std::vector<float> residual(dim_);
  std::vector<float> table;
  for (std::size_t p = 0; p < nprobe; ++p) {
    const std::uint32_t cell = cells[p].second;
    const InvertedList& list = lists_[cell];
    if (list.ids.empty()) continue;
    if (has_pq()) {
      const float* c = centroids_.data() + cell * dim_;
      for (std::size_t t = 0; t < dim_; ++t) residual[t] = x[t] - c[t];
      compute_table(residual, table);
      for (std::size_t i = 0; i < list.ids.size(); ++i) {
        const std::uint8_t* code = list.codes.data() + i * pq_m_;
        float d = 0.0f;
        for (std::size_t j = 0; j < pq_m_; ++j) d += table[j * kPqCentroids + code[j]];
        if (heap.accepts(d, list.ids[i])) heap.push({list.ids[i], values_[list.ids[i]], d});
      }
    } else {
      for (std::size_t i = 0; i < list.ids.size(); ++i) {
        const double d = l2_sq_f32(x.data(), list.vectors.data() + i * dim_, dim_);
        if (heap.accepts(d, list.ids[i])) heap.push({list.ids[i], values_[list.ids[i]], d});
      }
    }
  }
  NeighborSet found = heap.take_sorted();

  if (rerank) {
    NeighborHeap exact(params.k);
    for (const Neighbor& n : found) {
      const std::span<const float> key(raw_keys_.data() + n.id * input_dim_, input_dim_);
      exact.push({n.id, n.value, metric_distance(metric_, query, key)});
    }
    return exact.take_sorted();
  }
  if (metric_ == Metric::kCosine)
    for (Neighbor& n : found) n.distance *= 0.5;  // ‖a−b‖²/2 = 1 − cos on unit vectors
  return found;
}

std::optional<RawDatastore> IvfPqIndex::raw_datastore() const {
  if (!raw_retained_) return std::nullopt;
  RawDatastore ds(input_dim_);
  for (EntryId i = 0; i < size(); ++i) ds.add({raw_keys_.data() + i * input_dim_, input_dim_}, values_[i]);
  return ds;
}

IvfPqIndex train_index(const RawDatastore& ds, const IndexConfig& config, std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (n == 0) throw InvalidArgument("train_index: empty datastore");
  const std::size_t nlist = config.nlist == 0 ? default_nlist(n) : config.nlist;
  if (nlist > n) throw InvalidArgument("train_index: fewer entries than nlist");
  if (config.pq_m > 0 && n < std::max(nlist, kPqCentroids))
    throw InvalidArgument("train_index: PQ needs at least max(nlist, 256) entries");

  IvfPqIndex index;
  index.input_dim_ = ds.dim();
  index.nlist_ = nlist;
  index.pq_m_ = config.pq_m;
  index.metric_ = config.metric;

  Matrix keys(n, ds.dim());
  for (EntryId i = 0; i < n; ++i) {
    const auto k = ds.key(i);
    if (config.metric == Metric::kCosine) {
      const auto u = normalized(k);
      std::copy(u.begin(), u.end(), keys.row(i).begin());
    } else {
      std::copy(k.begin(), k.end(), keys.row(i).begin());
    }
  }

  if (config.use_pca) {
    if (config.pca_dim == 0 || config.pca_dim > ds.dim())
      throw InvalidArgument("train_index: pca_dim must be in [1, key dim]");
    Matrix sample = keys;
    if (n > config.pca_sample_cap) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      Rng rng(mix_seed(seed, 3));
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(config.pca_sample_cap);
      std::sort(order.begin(), order.end());
      sample = Matrix(order.size(), ds.dim());
      for (std::size_t r = 0; r < order.size(); ++r)
        std::copy(keys.row(order[r]).begin(), keys.row(order[r]).end(), sample.row(r).begin());
    }
    PcaModel pca = pca_fit(sample, config.pca_dim);
    round_pca(pca);
    keys = pca.apply_batch(keys);
    index.pca_ = std::move(pca);
  }
  const std::size_t dim = keys.cols();
  index.dim_ = dim;
  if (config.pq_m > 0 && dim % config.pq_m != 0)
    throw InvalidArgument("train_index: pq_m must divide the (post-PCA) dimension");

  std::vector<float> x(n * dim);
  for (std::size_t i = 0; i < n * dim; ++i) x[i] = static_cast<float>(keys.data()[i]);
  for (std::size_t i = 0; i < n * dim; ++i) keys.data()[i] = x[i];

  const KMeansResult coarse = kmeans(keys, nlist, mix_seed(seed, 10), config.kmeans_iters);
  index.centroids_ = to_float(coarse.centroids.data());

  std::vector<std::uint32_t> cell(n);
  for (std::size_t i = 0; i < n; ++i) cell[i] = nearest_row(x.data() + i * dim, index.centroids_, nlist, dim);

  std::vector<std::uint8_t> codes;
  if (config.pq_m > 0) {
    const std::size_t m = config.pq_m;
    const std::size_t dsub = dim / m;
    std::vector<float> residual(n * dim);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < dim; ++t)
        residual[i * dim + t] = x[i * dim + t] - index.centroids_[cell[i] * dim + t];

    index.codebooks_.assign(m * kPqCentroids * dsub, 0.0f);
    codes.assign(n * m, 0);
    for (std::size_t j = 0; j < m; ++j) {
      Matrix sub(n, dsub);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < dsub; ++t) sub(i, t) = residual[i * dim + j * dsub + t];
      const KMeansResult km = kmeans(sub, kPqCentroids, mix_seed(seed, 100 + j), config.kmeans_iters);
      std::vector<float> book = to_float(km.centroids.data());
      std::copy(book.begin(), book.end(), index.codebooks_.begin() + j * kPqCentroids * dsub);
      for (std::size_t i = 0; i < n; ++i)
        codes[i * m + j] = static_cast<std::uint8_t>(
            nearest_row(residual.data() + i * dim + j * dsub, book, kPqCentroids, dsub));
    }
  }

  index.lists_.assign(nlist, {});
  for (std::size_t i = 0; i < n; ++i) {
    auto& list = index.lists_[cell[i]];
    list.ids.push_back(i);
    if (config.pq_m > 0)
      list.codes.insert(list.codes.end(), codes.begin() + i * config.pq_m, codes.begin() + (i + 1) * config.pq_m);
    else
      list.vectors.insert(list.vectors.end(), x.begin() + i * dim, x.begin() + (i + 1) * dim);
  }
  index.values_ = ds.values();
  index.raw_retained_ = config.keep_raw_keys;
  if (config.keep_raw_keys) index.raw_keys_ = ds.keys();
  index.build_locator();
  return index;
}

std::vector<unsigned char> encode_index(const IvfPqIndex& index) {
  ByteWriter w;
  w.magic("KVDI");
  w.put<std::uint32_t>(kIndexVersion);
  std::uint32_t flags = 0;
  if (index.has_pca()) flags |= kFlagPca;
  if (index.has_pq()) flags |= kFlagPq;
  if (index.raw_retained_) flags |= kFlagRaw;
  if (index.metric_ == Metric::kCosine) flags |= kFlagCosine;
  w.put<std::uint32_t>(flags);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.input_dim_));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.dim_));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.nlist_));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.pq_m_));
  w.put<std::uint64_t>(index.size());

  auto put_f32 = [&w](std::span<const double> v) {
    for (double x : v) w.put<float>(static_cast<float>(x));
  };
  if (index.pca_) {
    put_f32(index.pca_->mean);
    put_f32(index.pca_->components.data());
    put_f32(index.pca_->explained_variance);
  }
  w.put_all(std::span<const float>(index.centroids_));
  w.put_all(std::span<const float>(index.codebooks_));
  for (const auto& list : index.lists_) {
    w.put<std::uint64_t>(list.ids.size());
    w.put_all(std::span<const EntryId>(list.ids));
    if (index.has_pq())
      w.put_all(std::span<const std::uint8_t>(list.codes));
    else
      w.put_all(std::span<const float>(list.vectors));
  }
  w.put_all(std::span<const TokenId>(index.values_));
  w.put_all(std::span<const float>(index.raw_keys_));
  return w.bytes();
}

IvfPqIndex decode_index(std::vector<unsigned char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("KVDI");
  const auto version = r.get<std::uint32_t>();
  if (version != kIndexVersion) throw FormatError("KVDS-IDX: unsupported version " + std::to_string(version));
  const auto flags = r.get<std::uint32_t>();
  if (flags & ~(kFlagPca | kFlagPq | kFlagRaw | kFlagCosine)) throw FormatError("KVDS-IDX: unknown flags");

  IvfPqIndex index;
  index.input_dim_ = r.get<std::uint32_t>();
  index.dim_ = r.get<std::uint32_t>();
  index.nlist_ = r.get<std::uint32_t>();
  index.pq_m_ = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining() / sizeof(TokenId)) throw FormatError("truncated file");
  index.metric_ = (flags & kFlagCosine) ? Metric::kCosine : Metric::kL2;
  index.raw_retained_ = (flags & kFlagRaw) != 0;

  if (index.input_dim_ == 0 || index.dim_ == 0 || index.nlist_ == 0)
    throw FormatError("KVDS-IDX: zero dimension or list count");
  if (((flags & kFlagPq) != 0) != (index.pq_m_ > 0)) throw FormatError("KVDS-IDX: pq flag and m disagree");
  if (index.pq_m_ > 0 && index.dim_ % index.pq_m_ != 0) throw FormatError("KVDS-IDX: m does not divide dim");
  if (!(flags & kFlagPca) && index.dim_ != index.input_dim_) throw FormatError("KVDS-IDX: dim mismatch without PCA");
  if (index.dim_ > index.input_dim_) throw FormatError("KVDS-IDX: dim exceeds input dim");

  auto get_f64 = [&r](std::size_t n) {
    if (n > r.remaining() / sizeof(float)) throw FormatError("truncated file");
    std::vector<float> tmp(n);
    r.get_all(std::span<float>(tmp));
    return Vector(tmp.begin(), tmp.end());
  };
  auto get_f32 = [&r](std::size_t n) {
    if (n > r.remaining() / sizeof(float)) throw FormatError("truncated file");
    std::vector<float> tmp(n);
    r.get_all(std::span<float>(tmp));
    return tmp;
  };
  if (flags & kFlagPca) {
    PcaModel pca;
    pca.in_dim = index.input_dim_;
    pca.out_dim = index.dim_;
    pca.mean = get_f64(pca.in_dim);
    pca.components = Matrix(pca.out_dim, pca.in_dim);
    pca.components.data() = get_f64(pca.out_dim * pca.in_dim);
    pca.explained_variance = get_f64(pca.out_dim);
    index.pca_ = std::move(pca);
  }
  index.centroids_ = get_f32(index.nlist_ * index.dim_);
  if (index.pq_m_ > 0) index.codebooks_ = get_f32(index.pq_m_ * kPqCentroids * (index.dim_ / index.pq_m_));

  index.lists_.resize(index.nlist_);
  std::vector<char> seen(count, 0);
  std::uint64_t total = 0;
  for (auto& list : index.lists_) {
    const auto len = r.get<std::uint64_t>();
    if (len > count - total) throw FormatError("KVDS-IDX: list lengths exceed entry count");
    total += len;
    if (len > r.remaining() / sizeof(EntryId)) throw FormatError("truncated file");
    list.ids.resize(len);
    r.get_all(std::span<EntryId>(list.ids));
    for (EntryId id : list.ids) {
      if (id >= count || seen[id]) throw FormatError("KVDS-IDX: invalid or duplicate entry id");
      seen[id] = 1;
    }
    if (index.pq_m_ > 0) {
      list.codes.resize(len * index.pq_m_);
      r.get_all(std::span<std::uint8_t>(list.codes));
    } else {
      list.vectors = get_f32(len * index.dim_);
    }
  }
  if (total != count) throw FormatError("KVDS-IDX: list lengths do not cover all entries");
  index.values_.resize(count);
  r.get_all(std::span<TokenId>(index.values_));
  if (index.raw_retained_) index.raw_keys_ = get_f32(count * index.input_dim_);
  r.expect_end();
  index.build_locator();
  return index;
}

void write_index(const IvfPqIndex& index, const std::filesystem::path& path) {
  save_bytes(encode_index(index), path);
}

IvfPqIndex read_index(const std::filesystem::path& path) { return decode_index(load_bytes(path)); }

}  // namespace kvmt
