#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kvmt/datastore.hpp"
#include "kvmt/model.hpp"
#include "kvmt/task.hpp"

namespace kvmt {

enum class AlignObjective { kNone, kNca, kMse };
std::string to_string(AlignObjective a);
AlignObjective parse_align(const std::string& name);

struct TrainConfig {
  AlignObjective align = AlignObjective::kNca;
  double alpha = 1.0;
  double tau = 0.1;
  std::size_t k = 8;
  double lr = 1e-3;
  /// Sentences are packed into a batch until it holds at least this many target tokens.
  std::size_t batch_tokens = 128;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  /// Use representation fusion on the MT path (pred mode) instead of the plain output layer.
  bool fusion = true;
  bool normalize_nca = false;
  /// Return the parameters from the epoch with the highest validation accuracy.
  bool keep_best = false;

  bool uses_retrieval() const { return fusion || align != AlignObjective::kNone; }
};

/// The key a training token should align its projected query with.
class PositiveKeys {
 public:
  virtual ~PositiveKeys() = default;
  virtual Vector positive(std::size_t sentence, std::size_t position, TokenId gold) const = 0;
};

/// Noise-free codebook row of the gold token (oracle datastores).
class CodebookPositives final : public PositiveKeys {
 public:
  explicit CodebookPositives(Matrix codebook) : codebook_(std::move(codebook)) {}
  Vector positive(std::size_t sentence, std::size_t position, TokenId gold) const override;

 private:
  Matrix codebook_;
};

/// Key stored for the gold (sentence, position) when the datastore was built from
/// the training targets in corpus order, EOS included.
class AlignedPositives final : public PositiveKeys {
 public:
  AlignedPositives(const RawDatastore& ds, const Corpus& corpus);
  Vector positive(std::size_t sentence, std::size_t position, TokenId gold) const override;

 private:
  const RawDatastore& ds_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> lengths_;
};

/// Sentence indices into the training corpus.
using Batch = std::vector<std::size_t>;

/// Batches of consecutive sentences from a seeded shuffle.
std::vector<Batch> make_batches(const Corpus& corpus, std::size_t batch_tokens, std::uint64_t seed);

struct TokenRetrieval {
  NeighborSet neighbors;
  Vector positive;
  TokenId gold = 0;
};

/// Neighbours and positives for each batch token in sentence-major order, held fixed while
/// the loss is differentiated. `negatives` pools every retrieved key.
struct BatchRetrieval {
  std::vector<TokenRetrieval> tokens;
  Matrix negatives;
};

BatchRetrieval retrieve_batch(const ToyModel& model, const Corpus& corpus, const Batch& batch,
                              const RawDatastore& ds, const Searcher& searcher, const PositiveKeys& positives,
                              std::size_t k);

struct BatchLoss {
  double mt = 0;
  double align = 0;
  double total = 0;
  double qk_cos = 0;
  double retr_acc = 0;
  std::size_t tokens = 0;
};

/// Combined loss L_MT + α·L_align for the batch with the given retrieval. Gradients
/// for every parameter group are accumulated into `grads` when it is non-null.
/// `retrieval` may be null only when the config uses no retrieval.
BatchLoss batch_loss_and_grad(const ToyModel& model, const Corpus& corpus, const Batch& batch,
                              const BatchRetrieval* retrieval, const TrainConfig& config, ToyModel* grads);

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<std::vector<double>> m, v;

  void step(ToyModel& model, ToyModel& grads);
};

struct StepReport {
  std::size_t step = 0;
  double l_mt = 0;
  double l_align = 0;
  double qk_cos = 0;
  double retr_acc = 0;
};

struct EpochReport {
  std::size_t epoch = 0;
  double l_mt = 0;      // per token
  double l_align = 0;   // per token
  double qk_cos = 0;
  double retr_acc = 0;
  double valid_acc = 0;
};

std::string to_json(const StepReport& r);
std::string to_json(const EpochReport& r);

struct TrainResult {
  ToyModel model;
  std::vector<StepReport> steps;
  std::vector<EpochReport> epochs;
  std::size_t selected_epoch = 0;  // epoch the returned parameters come from
};

/// Everything a run needs besides the config. `datastore` and `positives` may be
/// null when the config uses no retrieval.
struct TrainInputs {
  const Corpus* train = nullptr;
  const Corpus* valid = nullptr;
  const RawDatastore* datastore = nullptr;
  const PositiveKeys* positives = nullptr;
  ModelConfig model;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Seeded initialisation and Adam training. Retrieval during training is exact L2.
TrainResult train(const TrainInputs& inputs, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// One optimisation step on `batch`; exposed for tests.
StepReport train_step(ToyModel& model, Adam& adam, const TrainInputs& inputs, const Batch& batch,
                      const TrainConfig& config, std::size_t step_index);

}  // namespace kvmt
