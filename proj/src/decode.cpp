#include "kvmt/decode.hpp"

#include <algorithm>
#include <cmath>

#include "kvmt/fusion.hpp"

namespace kvmt {

std::string to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::kBaseline: return "baseline";
    case DecodeMode::kKnnInterpolate: return "knn";
    case DecodeMode::kPredFusion: return "pred";
  }
  return "?";
}

DecodeMode parse_decode_mode(const std::string& name) {
  if (name == "baseline") return DecodeMode::kBaseline;
  if (name == "knn" || name == "knn_interpolate") return DecodeMode::kKnnInterpolate;
  if (name == "pred" || name == "pred_fusion") return DecodeMode::kPredFusion;
  throw InvalidArgument("unknown decode mode: " + name);
}

Vector step_distribution(const ToyModel& model, const Searcher* searcher, const DecoderStep& step,
                         const DecodeConfig& config) {
  if (config.mode == DecodeMode::kBaseline) return output_distribution(step.h, model.w_e);
  if (searcher == nullptr) throw InvalidArgument("decode: retrieval mode needs a datastore");
  if (config.k == 0) throw InvalidArgument("decode: k must be >= 1");

  const std::vector<float> query = to_float(project_query(model, step.q));
  const NeighborSet nb = searcher->search(query, config.k);
  if (nb.empty()) return output_distribution(step.h, model.w_e);

  if (config.mode == DecodeMode::kKnnInterpolate) {
    const Vector p_mt = output_distribution(step.h, model.w_e);
    const Vector p_knn = knn_distribution(nb, config.temperature, model.config.tgt_vocab);
    return interpolate(p_mt, p_knn, config.lambda);
  }

  std::vector<Vector> values;
  values.reserve(nb.size());
  for (const Neighbor& n : nb) {
    if (n.value >= model.config.tgt_vocab) throw InvalidArgument("decode: datastore value outside vocabulary");
    const auto e = model.w_e.row(n.value);
    values.emplace_back(e.begin(), e.end());
  }
  const Attention att = attend_values(step.q, values);
  const Gate gate = gate_fuse(step.h, att.m, model.fusion);
  return output_distribution(gate.z, model.w_e);
}

double score_sequence(const ToyModel& model, const Searcher* searcher, const TokenSeq& source,
                      const TokenSeq& target, const DecodeConfig& config) {
  TokenSeq gold = target;
  gold.push_back(kEos);
  validate_tokens(model, source, gold);
  const Matrix enc = encode(model, source);
  double total = 0;
  for (std::size_t t = 0; t < gold.size(); ++t) {
    const DecoderStep step = decoder_step(model, enc, t == 0 ? kBos : gold[t - 1], t);
    total += std::log(step_distribution(model, searcher, step, config)[gold[t]]);
  }
  return total;
}

TokenSeq greedy_decode(const ToyModel& model, const Searcher* searcher, const TokenSeq& source,
                       const DecodeConfig& config, std::size_t max_len) {
  const Matrix enc = encode(model, source);
  TokenSeq out;
  TokenId prev = kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    const Vector p = step_distribution(model, searcher, decoder_step(model, enc, prev, t), config);
    prev = static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
    if (prev == kEos) break;
    out.push_back(prev);
  }
  return out;
}

namespace {

std::pair<std::size_t, std::size_t> teacher_forced_hits(const ToyModel& model, const Searcher* searcher,
                                                        const SentencePair& pair, const DecodeConfig& config) {
  TokenSeq gold = pair.target;
  gold.push_back(kEos);
  validate_tokens(model, pair.source, gold);
  const Matrix enc = encode(model, pair.source);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < gold.size(); ++t) {
    const Vector p = step_distribution(model, searcher, decoder_step(model, enc, t == 0 ? kBos : gold[t - 1], t), config);
    hits += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == gold[t];
  }
  return {hits, gold.size()};
}

}  // namespace

double token_accuracy(const ToyModel& model, const Searcher* searcher, const Corpus& corpus,
                      const DecodeConfig& config) {
  if (corpus.empty()) throw InvalidArgument("token_accuracy: empty corpus");
  std::size_t hits = 0, total = 0;
  for (const auto& pair : corpus) {
    const auto [h, n] = teacher_forced_hits(model, searcher, pair, config);
    hits += h;
    total += n;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

DecodeReport evaluate(const ToyModel& model, const Searcher* searcher, const Corpus& corpus,
                      const DecodeConfig& config, std::size_t max_len) {
  if (corpus.empty()) throw InvalidArgument("evaluate: empty corpus");
  DecodeReport r;
  std::size_t hits = 0, exact = 0;
  for (const auto& pair : corpus) {
    const auto [h, n] = teacher_forced_hits(model, searcher, pair, config);
    hits += h;
    r.tokens += n;
    exact += greedy_decode(model, searcher, pair.source, config, max_len) == pair.target;
  }
  r.sentences = corpus.size();
  r.token_accuracy = static_cast<double>(hits) / static_cast<double>(r.tokens);
  r.exact_match = static_cast<double>(exact) / static_cast<double>(r.sentences);
  return r;
}

}  // namespace kvmt
