#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "helpers.hpp"
#include "kvmt/decode.hpp"
#include "kvmt/losses.hpp"
#include "kvmt/trainer.hpp"

using namespace kvmt;

namespace {

struct Fixture {
  SyntheticTask task;
  RawDatastore store;
  CodebookPositives positives;
  ModelConfig model;

  Fixture(std::uint64_t seed, double epsilon)
      : task(make_task(seed, small_task())),
        store(generate_oracle_datastore(targets_with_eos(task.train), 16, epsilon, seed)),
        positives(oracle_codebook(task.vocab_size(), 16, seed)) {
    model.d = 16;
    model.d_ff = 24;
    model.d_key = 16;
    model.src_vocab = model.tgt_vocab = task.vocab_size();
  }

  static TaskConfig small_task() {
    TaskConfig c;
    c.symbols = 12;
    c.min_len = 3;
    c.max_len = 6;
    c.train_size = 150;
    c.valid_size = 30;
    c.test_size = 30;
    return c;
  }

  TrainInputs inputs() const { return {&task.train, &task.valid, &store, &positives, model}; }
};

}  // namespace

TEST_CASE("objective names") {
  for (auto a : {AlignObjective::kNone, AlignObjective::kNca, AlignObjective::kMse}) CHECK(parse_align(to_string(a)) == a);
  CHECK_THROWS_AS(parse_align("cosine"), InvalidArgument);
  TrainConfig c;
  c.fusion = false;
  c.align = AlignObjective::kNone;
  CHECK_FALSE(c.uses_retrieval());
  c.align = AlignObjective::kMse;
  CHECK(c.uses_retrieval());
}

TEST_CASE("make_batches partitions the corpus") {
  const SyntheticTask t = make_task(1, Fixture::small_task());
  const auto batches = make_batches(t.train, 40, 9);
  std::vector<std::size_t> seen;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    std::size_t tokens = 0;
    for (std::size_t s : batches[b]) {
      seen.push_back(s);
      tokens += t.train[s].target.size() + 1;
    }
    if (b + 1 < batches.size()) {
      CHECK(tokens >= 40);
      // Packing stops as soon as the budget is reached.
      CHECK(tokens - (t.train[batches[b].back()].target.size() + 1) < 40);
    }
  }
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> all(t.train.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(seen == all);
  CHECK(make_batches(t.train, 40, 9) == batches);
  CHECK_FALSE(make_batches(t.train, 40, 10) == batches);
  CHECK(make_batches(t.train, 1, 0).size() == t.train.size());
  CHECK_THROWS_AS(make_batches(t.train, 0, 0), InvalidArgument);
}

TEST_CASE("positive keys") {
  const Fixture f(2, 0.3);
  const Matrix c = oracle_codebook(f.task.vocab_size(), 16, 2);
  const Vector p = f.positives.positive(0, 0, 5);
  CHECK(p == Vector(c.row(5).begin(), c.row(5).end()));
  CHECK_THROWS_AS(f.positives.positive(0, 0, 99), InvalidArgument);

  const AlignedPositives aligned(f.store, f.task.train);
  const TokenSeq gold0 = targets_with_eos(f.task.train)[0];
  const std::size_t offset = gold0.size();
  const TokenId y = f.task.train[1].target[2];
  const Vector k = aligned.positive(1, 2, y);
  CHECK(k == to_double(f.store.key(offset + 2)));
  CHECK(aligned.positive(0, gold0.size() - 1, kEos) == to_double(f.store.key(gold0.size() - 1)));
  CHECK_THROWS_AS(aligned.positive(1, 2, y + 1), InvalidArgument);
  CHECK_THROWS_AS(aligned.positive(1, 100, y), InvalidArgument);
  CHECK_THROWS_AS(aligned.positive(f.task.train.size(), 0, y), InvalidArgument);

  Corpus shorter(f.task.train.begin(), f.task.train.end() - 1);
  CHECK_THROWS_AS(AlignedPositives(f.store, shorter), InvalidArgument);
}

TEST_CASE("retrieval for a batch") {
  const Fixture f(3, 0.2);
  const ToyModel m = ToyModel::init(f.model, 1);
  const Batch batch = {0, 4};
  const ExactSearcher s(f.store);
  const BatchRetrieval r = retrieve_batch(m, f.task.train, batch, f.store, s, f.positives, 5);
  const std::size_t n = f.task.train[0].target.size() + f.task.train[4].target.size() + 2;
  REQUIRE(r.tokens.size() == n);
  CHECK(r.negatives.rows() == 5 * n);
  CHECK(r.tokens.front().gold == f.task.train[0].target[0]);
  CHECK(r.tokens.back().gold == kEos);
  const Neighbor& first = r.tokens[0].neighbors[0];
  for (std::size_t i = 0; i < 16; ++i) CHECK(r.negatives(0, i) == f.store.key(first.id)[i]);

  RawDatastore wrong(8);
  wrong.add(std::vector<float>(8, 0.f), 1);
  CHECK_THROWS_AS(retrieve_batch(m, f.task.train, batch, wrong, ExactSearcher(wrong), f.positives, 1),
                  InvalidArgument);
}

TEST_CASE("batch loss requires retrieval when configured") {
  const Fixture f(4, 0.2);
  const ToyModel m = ToyModel::init(f.model, 0);
  TrainConfig cfg;
  CHECK_THROWS_AS(batch_loss_and_grad(m, f.task.train, {0}, nullptr, cfg, nullptr), InvalidArgument);
  CHECK_THROWS_AS(batch_loss_and_grad(m, f.task.train, {}, nullptr, cfg, nullptr), InvalidArgument);
  cfg.fusion = false;
  cfg.align = AlignObjective::kNone;
  const BatchLoss plain = batch_loss_and_grad(m, f.task.train, {0, 1}, nullptr, cfg, nullptr);
  CHECK(plain.tokens == f.task.train[0].target.size() + f.task.train[1].target.size() + 2);
  CHECK(plain.align == 0.0);
  CHECK(plain.total == plain.mt);
  double want = 0;
  for (std::size_t s : {0, 1}) {
    TokenSeq gold = f.task.train[s].target;
    gold.push_back(kEos);
    want += mt_loss(forward(m, f.task.train[s].source, gold).logits, gold).loss;
  }
  CHECK(plain.mt == doctest::Approx(want));
}

TEST_CASE("alpha zero without fusion follows the plain trajectory") {
  const Fixture f(5, 0.2);
  TrainConfig none;
  none.fusion = false;
  none.align = AlignObjective::kNone;
  none.epochs = 2;
  none.seed = 3;
  TrainConfig zero = none;
  zero.align = AlignObjective::kNca;
  zero.alpha = 0.0;
  const TrainResult a = train(f.inputs(), none);
  const TrainResult b = train(f.inputs(), zero);
  CHECK(a.model == b.model);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].l_mt == b.steps[i].l_mt);
}

TEST_CASE("training is deterministic and leaves the datastore alone") {
  const Fixture f(6, 0.2);
  const RawDatastore before = f.store;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 4;
  cfg.batch_tokens = 64;
  const TrainResult a = train(f.inputs(), cfg);
  const TrainResult b = train(f.inputs(), cfg);
  CHECK(a.model == b.model);
  CHECK(f.store == before);
  CHECK(f.store.keys() == before.keys());
  cfg.seed = 5;
  CHECK_FALSE(train(f.inputs(), cfg).model == a.model);
}

TEST_CASE("training lowers the loss") {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Fixture f(seed, 0.1);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.lr = 3e-3;
    cfg.batch_tokens = 32;
    const TrainInputs in = f.inputs();
    ToyModel m = ToyModel::init(f.model, mix_seed(seed, 5));
    Adam adam;
    adam.lr = cfg.lr;
    auto batches = make_batches(f.task.train, cfg.batch_tokens, seed);
    for (std::uint64_t e = 1; batches.size() < 50; ++e) {
      const auto more = make_batches(f.task.train, cfg.batch_tokens, mix_seed(seed, e));
      batches.insert(batches.end(), more.begin(), more.end());
    }
    double first = 0, last = 0;
    for (std::size_t step = 0; step < 50; ++step) {
      const StepReport r = train_step(m, adam, in, batches[step], cfg, step + 1);
      CHECK(r.step == step + 1);
      std::size_t n = 0;
      for (std::size_t s : batches[step]) n += f.task.train[s].target.size() + 1;
      const double total = (r.l_mt + r.l_align) / static_cast<double>(n);
      if (step < 5) first += total;
      if (step >= 45) last += total;
    }
    improved += last < first;
  }
  CHECK(improved >= 2);
}

TEST_CASE("NCA alignment improves retrieval over an unaligned control") {
  const Fixture f(7, 0.0);
  TrainConfig cfg;
  cfg.seed = 7;
  cfg.epochs = 12;
  cfg.batch_tokens = 64;
  cfg.lr = 3e-3;
  std::vector<EpochReport> seen;
  const TrainResult r = train(f.inputs(), cfg, [&](const EpochReport& e) { seen.push_back(e); });
  REQUIRE(r.epochs.size() == 12);
  REQUIRE(seen.size() == 12);
  CHECK(seen.back().epoch == 12);
  CHECK(r.selected_epoch == 12);
  CHECK(r.epochs.back().retr_acc > r.epochs.front().retr_acc);
  CHECK(r.epochs.back().l_align < r.epochs.front().l_align);

  TrainConfig control = cfg;
  control.alpha = 0.0;
  const TrainResult c = train(f.inputs(), control);
  CHECK(r.epochs.back().retr_acc > c.epochs.back().retr_acc + 0.2);
}

TEST_CASE("cosine-scored NCA raises query-key cosine") {
  const Fixture f(7, 0.0);
  TrainConfig cfg;
  cfg.seed = 7;
  cfg.epochs = 30;
  cfg.batch_tokens = 64;
  cfg.lr = 3e-3;
  cfg.normalize_nca = true;
  const TrainResult r = train(f.inputs(), cfg);
  CHECK(r.epochs.back().qk_cos > r.epochs.front().qk_cos + 0.2);
  CHECK(r.epochs.back().retr_acc > r.epochs.front().retr_acc);
}

TEST_CASE("keep_best returns the epoch with the best validation accuracy") {
  const Fixture f(8, 0.1);
  TrainConfig cfg;
  cfg.fusion = false;
  cfg.align = AlignObjective::kNone;
  cfg.epochs = 5;
  cfg.lr = 2e-2;
  cfg.keep_best = true;
  const TrainResult r = train(f.inputs(), cfg);
  std::size_t best = 0;
  for (std::size_t e = 0; e < r.epochs.size(); ++e)
    if (r.epochs[e].valid_acc > r.epochs[best].valid_acc) best = e;
  CHECK(r.selected_epoch == best + 1);
  DecodeConfig dc;
  CHECK(token_accuracy(r.model, nullptr, f.task.valid, dc) == r.epochs[best].valid_acc);
}

TEST_CASE("train argument errors") {
  const Fixture f(9, 0.1);
  TrainConfig cfg;
  cfg.epochs = 1;
  TrainConfig bad = cfg;
  bad.alpha = -1;
  CHECK_THROWS_AS(train(f.inputs(), bad), InvalidArgument);
  bad = cfg;
  bad.tau = 0;
  CHECK_THROWS_AS(train(f.inputs(), bad), InvalidArgument);
  bad = cfg;
  bad.k = 0;
  CHECK_THROWS_AS(train(f.inputs(), bad), InvalidArgument);
  bad = cfg;
  bad.lr = 0;
  CHECK_THROWS_AS(train(f.inputs(), bad), InvalidArgument);
  TrainInputs in = f.inputs();
  in.datastore = nullptr;
  CHECK_THROWS_AS(train(in, cfg), InvalidArgument);
  Corpus empty;
  in = f.inputs();
  in.train = &empty;
  CHECK_THROWS_AS(train(in, cfg), InvalidArgument);
}

TEST_CASE("report JSON") {
  EpochReport e;
  e.epoch = 3;
  e.l_mt = 0.5;
  e.l_align = 1.25;
  e.qk_cos = 0.1;
  e.retr_acc = 1;
  e.valid_acc = 0.75;
  CHECK(to_json(e) == "{\"epoch\":3,\"L_MT\":0.5,\"L_align\":1.25,\"qk_cos\":0.1,\"retr_acc\":1,\"valid_acc\":0.75}");
  StepReport s{7, 2.0, 0.0, -0.5, 0.25};
  CHECK(to_json(s) == "{\"step\":7,\"L_MT\":2,\"L_align\":0,\"qk_cos\":-0.5,\"retr_acc\":0.25}");
}
