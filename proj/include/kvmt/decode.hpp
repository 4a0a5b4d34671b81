#pragma once

#include <string>

#include "kvmt/datastore.hpp"
#include "kvmt/model.hpp"
#include "kvmt/task.hpp"

namespace kvmt {

enum class DecodeMode { kBaseline, kKnnInterpolate, kPredFusion };
std::string to_string(DecodeMode mode);
/// Accepts baseline, knn (or knn_interpolate) and pred (or pred_fusion).
DecodeMode parse_decode_mode(const std::string& name);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::kBaseline;
  std::size_t k = 8;
  double temperature = 1.0;  // knn mode only
  double lambda = 0.5;       // knn mode only, weight of the model distribution
};

/// Output distribution for one decoder step. Retrieval queries are Q_proj·q_t.
/// `searcher` may be null in baseline mode; an empty retrieval falls back to the model distribution.
Vector step_distribution(const ToyModel& model, const Searcher* searcher, const DecoderStep& step,
                         const DecodeConfig& config);

/// Teacher-forced Σ_t log p(y_t) over `target` followed by EOS.
double score_sequence(const ToyModel& model, const Searcher* searcher, const TokenSeq& source,
                      const TokenSeq& target, const DecodeConfig& config);

/// Argmax decoding until EOS or `max_len` tokens; the EOS is not returned.
TokenSeq greedy_decode(const ToyModel& model, const Searcher* searcher, const TokenSeq& source,
                       const DecodeConfig& config, std::size_t max_len);

struct DecodeReport {
  double token_accuracy = 0;  // teacher-forced argmax accuracy over target tokens and EOS
  double exact_match = 0;     // greedy output equals the reference
  std::size_t sentences = 0;
  std::size_t tokens = 0;
};

DecodeReport evaluate(const ToyModel& model, const Searcher* searcher, const Corpus& corpus,
                      const DecodeConfig& config, std::size_t max_len = 32);

/// Teacher-forced accuracy only; skips greedy decoding.
double token_accuracy(const ToyModel& model, const Searcher* searcher, const Corpus& corpus,
                      const DecodeConfig& config);

}  // namespace kvmt
