#include "kvmt/datastore.hpp"

#include <algorithm>

#include "kvmt/binio.hpp"

namespace kvmt {

namespace {
constexpr std::uint32_t kRawVersion = 1;
}

std::string to_string(AlignmentStrategy s) {
  switch (s) {
    case AlignmentStrategy::kMlm: return "MLM";
    case AlignmentStrategy::kDae: return "DAE";
    case AlignmentStrategy::kClm: return "CLM";
    case AlignmentStrategy::kOther: return "other";
  }
  return "other";
}

AlignmentStrategy parse_strategy(const std::string& name) {
  if (name == "MLM" || name == "mlm") return AlignmentStrategy::kMlm;
  if (name == "DAE" || name == "dae") return AlignmentStrategy::kDae;
  if (name == "CLM" || name == "clm") return AlignmentStrategy::kClm;
  if (name == "other") return AlignmentStrategy::kOther;
  throw InvalidArgument("unknown alignment strategy: " + name);
}

std::string to_string(Metric m) { return m == Metric::kL2 ? "l2" : "cosine"; }

Metric parse_metric(const std::string& name) {
  if (name == "l2" || name == "L2") return Metric::kL2;
  if (name == "cosine" || name == "cos") return Metric::kCosine;
  throw InvalidArgument("unknown metric: " + name);
}

double metric_distance(Metric metric, std::span<const float> a, std::span<const float> b) {
  if (metric == Metric::kL2) return l2_sq_f32(a.data(), b.data(), a.size());
  return 1.0 - cosine(a, b);
}

void NeighborHeap::push(const Neighbor& n) {
  if (k_ == 0 || !accepts(n.distance, n.id)) return;
  if (heap_.size() == k_) {
    std::pop_heap(heap_.begin(), heap_.end(), neighbor_less);
    heap_.pop_back();
  }
  heap_.push_back(n);
  std::push_heap(heap_.begin(), heap_.end(), neighbor_less);
}

NeighborSet NeighborHeap::take_sorted() {
  std::sort_heap(heap_.begin(), heap_.end(), neighbor_less);
  return std::move(heap_);
}

RawDatastore::RawDatastore(std::size_t dim, AlignmentStrategy strategy, std::string source_label)
    : dim_(dim), strategy_(strategy), source_label_(std::move(source_label)) {
  if (dim == 0) throw InvalidArgument("datastore dim must be positive");
}

void RawDatastore::add(std::span<const float> key, TokenId value) {
  if (key.size() != dim_) throw InvalidArgument("datastore add: key dimension mismatch");
  keys_.insert(keys_.end(), key.begin(), key.end());
  values_.push_back(value);
}

std::vector<Entry> align_states_to_pairs(std::span<const std::vector<float>> states,
                                         std::span<const TokenId> tokens,
                                         AlignmentStrategy /*strategy*/) {
  if (states.size() != tokens.size())
    throw InvalidArgument("align_states_to_pairs: state/token count mismatch");
  std::vector<Entry> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) out.push_back({states[t], tokens[t]});
  return out;
}

RawDatastore make_datastore(std::size_t dim, std::span<const Entry> entries,
                            AlignmentStrategy strategy) {
  RawDatastore ds(dim, strategy);
  for (const Entry& e : entries) ds.add(e);
  return ds;
}

NeighborSet exact_search(const RawDatastore& ds, std::span<const float> query, std::size_t k,
                         Metric metric) {
  if (ds.empty()) throw InvalidArgument("exact_search: empty datastore");
  if (query.size() != ds.dim()) throw InvalidArgument("exact_search: query dimension mismatch");
  if (k == 0) throw InvalidArgument("exact_search: k must be >= 1");

  NeighborHeap heap(std::min(k, ds.size()));
  if (metric == Metric::kL2) {
    const float* keys = ds.keys().data();
    for (EntryId i = 0; i < ds.size(); ++i) {
      const double d = l2_sq_f32(query.data(), keys + i * ds.dim(), ds.dim());
      if (heap.accepts(d, i)) heap.push({i, ds.value(i), d});
    }
  } else {
    const double qn = norm(query);
    for (EntryId i = 0; i < ds.size(); ++i) {
      const auto key = ds.key(i);
      const double kn = norm(key);
      const double c = (qn == 0.0 || kn == 0.0) ? 0.0 : std::clamp(dot(query, key) / (qn * kn), -1.0, 1.0);
      const double d = 1.0 - c;
      if (heap.accepts(d, i)) heap.push({i, ds.value(i), d});
    }
  }
  return heap.take_sorted();
}

std::vector<unsigned char> encode_raw(const RawDatastore& ds) {
  ByteWriter w;
  w.magic("KVDR");
  w.put<std::uint32_t>(kRawVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.dim()));
  w.put<std::uint64_t>(ds.size());
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ds.strategy()));
  w.zeros(7);
  for (EntryId i = 0; i < ds.size(); ++i) {
    w.put_all(ds.key(i));
    w.put<std::uint32_t>(ds.value(i));
  }
  return w.bytes();
}

void write_raw(const RawDatastore& ds, const std::filesystem::path& path) {
  save_bytes(encode_raw(ds), path);
}

RawDatastore decode_raw(std::vector<unsigned char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("KVDR");
  const auto version = r.get<std::uint32_t>();
  if (version != kRawVersion) throw FormatError("KVDS-RAW: unsupported version " + std::to_string(version));
  const auto dim = r.get<std::uint32_t>();
  if (dim == 0) throw FormatError("KVDS-RAW: dim is 0");
  const auto count = r.get<std::uint64_t>();
  const auto tag = r.get<std::uint8_t>();
  if (tag > 3) throw FormatError("KVDS-RAW: unknown strategy tag");
  r.skip(7);
  const std::uint64_t record = static_cast<std::uint64_t>(dim) * 4 + 4;
  if (count > r.remaining() / record) throw FormatError("truncated file");

  RawDatastore ds(dim, static_cast<AlignmentStrategy>(tag));
  std::vector<float> key(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    r.get_all(std::span<float>(key));
    ds.add(key, r.get<std::uint32_t>());
  }
  r.expect_end();
  return ds;
}

RawDatastore read_raw(const std::filesystem::path& path) { return decode_raw(load_bytes(path)); }

Matrix oracle_codebook(std::size_t vocab_size, std::size_t dim, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 1));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix c(vocab_size, dim);
  for (std::size_t v = 0; v < vocab_size; ++v) {
    auto row = c.row(v);
    for (double& x : row) x = gauss(rng);
    const double n = norm(std::span<const double>(row));
    for (double& x : row) x /= n;
  }
  return c;
}

RawDatastore generate_oracle_datastore(const std::vector<TokenSeq>& corpus, std::size_t dim,
                                       double epsilon, std::uint64_t seed) {
  if (dim < 8) throw InvalidArgument("oracle datastore: dim must be >= 8");
  if (epsilon < 0) throw InvalidArgument("oracle datastore: epsilon must be >= 0");
  TokenId max_token = 0;
  std::size_t tokens = 0;
  for (const auto& seq : corpus)
    for (TokenId t : seq) {
      max_token = std::max(max_token, t);
      ++tokens;
    }
  if (tokens == 0) throw InvalidArgument("oracle datastore: empty corpus");

  const Matrix codebook = oracle_codebook(static_cast<std::size_t>(max_token) + 1, dim, seed);
  Rng rng(mix_seed(seed, 2));
  std::normal_distribution<double> gauss(0.0, 1.0);
  RawDatastore ds(dim, AlignmentStrategy::kOther, "oracle");
  Vector key(dim);
  for (const auto& seq : corpus) {
    for (TokenId y : seq) {
      const auto c = codebook.row(y);
      for (std::size_t j = 0; j < dim; ++j) key[j] = c[j] + epsilon * gauss(rng);
      const double n = norm(std::span<const double>(key));
      for (double& x : key) x /= n;
      ds.add(to_float(key), y);
    }
  }
  return ds;
}

}  // namespace kvmt
