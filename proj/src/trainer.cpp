#include "kvmt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <optional>

#include "kvmt/decode.hpp"
#include "kvmt/fusion.hpp"
#include "kvmt/losses.hpp"

namespace kvmt {

std::string to_string(AlignObjective a) {
  switch (a) {
    case AlignObjective::kNone: return "none";
    case AlignObjective::kNca: return "nca";
    case AlignObjective::kMse: return "mse";
  }
  return "?";
}

AlignObjective parse_align(const std::string& name) {
  if (name == "none") return AlignObjective::kNone;
  if (name == "nca") return AlignObjective::kNca;
  if (name == "mse") return AlignObjective::kMse;
  throw InvalidArgument("unknown alignment objective: " + name);
}

Vector CodebookPositives::positive(std::size_t, std::size_t, TokenId gold) const {
  if (gold >= codebook_.rows()) throw InvalidArgument("positive: token outside codebook");
  const auto r = codebook_.row(gold);
  return Vector(r.begin(), r.end());
}

AlignedPositives::AlignedPositives(const RawDatastore& ds, const Corpus& corpus) : ds_(ds) {
  std::size_t offset = 0;
  for (const auto& p : corpus) {
    offsets_.push_back(offset);
    lengths_.push_back(p.target.size() + 1);
    offset += p.target.size() + 1;
  }
  if (offset != ds.size()) throw InvalidArgument("AlignedPositives: datastore does not match the corpus");
}

Vector AlignedPositives::positive(std::size_t sentence, std::size_t position, TokenId gold) const {
  if (sentence >= offsets_.size() || position >= lengths_[sentence])
    throw InvalidArgument("positive: position outside the corpus");
  const EntryId id = offsets_[sentence] + position;
  if (ds_.value(id) != gold) throw InvalidArgument("positive: datastore value differs from the gold token");
  return to_double(ds_.key(id));
}

std::vector<Batch> make_batches(const Corpus& corpus, std::size_t batch_tokens, std::uint64_t seed) {
  if (batch_tokens == 0) throw InvalidArgument("make_batches: batch_tokens must be >= 1");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  Batch cur;
  std::size_t tokens = 0;
  for (std::size_t s : order) {
    cur.push_back(s);
    tokens += corpus[s].target.size() + 1;
    if (tokens >= batch_tokens) {
      batches.push_back(std::move(cur));
      cur.clear();
      tokens = 0;
    }
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

BatchRetrieval retrieve_batch(const ToyModel& model, const Corpus& corpus, const Batch& batch,
                              const RawDatastore& ds, const Searcher& searcher, const PositiveKeys& positives,
                              std::size_t k) {
  if (ds.size() == 0) throw InvalidArgument("retrieve_batch: empty datastore");
  if (ds.dim() != model.config.d_key) throw InvalidArgument("retrieve_batch: datastore dim differs from d_key");
  BatchRetrieval out;
  std::size_t pooled = 0;
  for (std::size_t s : batch) {
    const auto& pair = corpus.at(s);
    TokenSeq gold = pair.target;
    gold.push_back(kEos);
    const ForwardResult fwd = forward(model, pair.source, gold);
    for (std::size_t t = 0; t < gold.size(); ++t) {
      TokenRetrieval tr;
      tr.gold = gold[t];
      tr.neighbors = searcher.search(to_float(project_query(model, fwd.steps[t].q)), k);
      tr.positive = positives.positive(s, t, gold[t]);
      if (tr.positive.size() != model.config.d_key) throw InvalidArgument("retrieve_batch: positive key dim");
      pooled += tr.neighbors.size();
      out.tokens.push_back(std::move(tr));
    }
  }
  out.negatives = Matrix(pooled, ds.dim());
  std::size_t row = 0;
  for (const auto& tr : out.tokens)
    for (const Neighbor& n : tr.neighbors) {
      const auto key = ds.key(n.id);
      std::copy(key.begin(), key.end(), out.negatives.row(row++).begin());
    }
  return out;
}

namespace {

struct SentenceState {
  TokenSeq gold;
  Matrix enc;
  std::vector<DecoderStep> steps;
};

}  // namespace

BatchLoss batch_loss_and_grad(const ToyModel& model, const Corpus& corpus, const Batch& batch,
                              const BatchRetrieval* retrieval, const TrainConfig& config, ToyModel* grads) {
  if (batch.empty()) throw InvalidArgument("batch_loss_and_grad: empty batch");
  if (config.uses_retrieval() && retrieval == nullptr)
    throw InvalidArgument("batch_loss_and_grad: configuration needs retrieval results");
  const std::size_t d = model.config.d;
  const std::size_t dk = model.config.d_key;

  std::vector<SentenceState> sents;
  std::size_t n_tokens = 0;
  for (std::size_t s : batch) {
    const auto& pair = corpus.at(s);
    SentenceState st;
    st.gold = pair.target;
    st.gold.push_back(kEos);
    validate_tokens(model, pair.source, st.gold);
    st.enc = encode(model, pair.source);
    for (std::size_t t = 0; t < st.gold.size(); ++t)
      st.steps.push_back(decoder_step(model, st.enc, t == 0 ? kBos : st.gold[t - 1], t));
    n_tokens += st.gold.size();
    sents.push_back(std::move(st));
  }
  if (retrieval && retrieval->tokens.size() != n_tokens)
    throw InvalidArgument("batch_loss_and_grad: retrieval does not match the batch");

  BatchLoss out;
  out.tokens = n_tokens;

  // Alignment term over projected queries.
  Matrix align_grad(n_tokens, dk);
  if (retrieval) {
    Matrix queries(n_tokens, dk), pos(n_tokens, dk);
    std::size_t idx = 0;
    for (const auto& st : sents)
      for (const auto& step : st.steps) {
        const Vector qp = project_query(model, step.q);
        const auto& tr = retrieval->tokens[idx];
        std::copy(qp.begin(), qp.end(), queries.row(idx).begin());
        std::copy(tr.positive.begin(), tr.positive.end(), pos.row(idx).begin());
        out.qk_cos += cosine(std::span<const double>(qp), std::span<const double>(tr.positive));
        std::size_t hits = 0;
        for (const Neighbor& n : tr.neighbors) hits += n.value == tr.gold;
        if (!tr.neighbors.empty())
          out.retr_acc += static_cast<double>(hits) / static_cast<double>(tr.neighbors.size());
        ++idx;
      }
    out.qk_cos /= static_cast<double>(n_tokens);
    out.retr_acc /= static_cast<double>(n_tokens);
    if (config.align != AlignObjective::kNone) {
      const LossGrad lg = config.align == AlignObjective::kNca
                              ? nca_loss(queries, pos, retrieval->negatives, config.tau, config.normalize_nca)
                              : mse_loss(queries, pos);
      out.align = lg.loss;
      align_grad = lg.grad;
    }
  }

  std::size_t idx = 0;
  for (std::size_t si = 0; si < sents.size(); ++si) {
    const auto& st = sents[si];
    Matrix grad_enc(st.enc.rows(), d);
    for (std::size_t t = 0; t < st.steps.size(); ++t, ++idx) {
      const DecoderStep& step = st.steps[t];
      const TokenId gold = st.gold[t];

      Vector z = step.h;
      std::vector<Vector> values;
      Attention att;
      Gate gate;
      if (config.fusion) {
        const auto& nb = retrieval->tokens[idx].neighbors;
        if (!nb.empty()) {
          for (const Neighbor& n : nb) {
            if (n.value >= model.config.tgt_vocab) throw InvalidArgument("batch_loss: neighbor value outside vocabulary");
            const auto e = model.w_e.row(n.value);
            values.emplace_back(e.begin(), e.end());
          }
          att = attend_values(step.q, values);
          gate = gate_fuse(step.h, att.m, model.fusion);
          z = gate.z;
        }
      }
      Vector logits = matvec(model.w_e, z);
      const double lse = log_sum_exp(logits);
      out.mt += lse - logits[gold];
      if (!grads) continue;

      // ∂/∂logits = softmax − onehot; logits = W_e z.
      Vector gl(logits.size());
      for (std::size_t v = 0; v < gl.size(); ++v) gl[v] = std::exp(logits[v] - lse);
      gl[gold] -= 1.0;
      add_outer(grads->w_e, gl, z);
      const Vector gz = matvec_transposed(model.w_e, gl);

      Vector gh(d, 0.0), gq(d, 0.0);
      if (!values.empty()) {
        Vector gm(d, 0.0);
        gate_fuse_backward(step.h, att.m, model.fusion, gate, gz, gh, gm, grads->fusion);
        std::vector<Vector> gvals;
        attend_values_backward(step.q, values, att, gm, gq, gvals);
        const auto& nb = retrieval->tokens[idx].neighbors;
        for (std::size_t j = 0; j < nb.size(); ++j) {
          auto row = grads->w_e.row(nb[j].value);
          for (std::size_t i = 0; i < d; ++i) row[i] += gvals[j][i];
        }
      } else {
        gh = gz;
      }

      if (config.align != AlignObjective::kNone && config.alpha != 0.0) {
        Vector ga(dk);
        const auto row = align_grad.row(idx);
        for (std::size_t i = 0; i < dk; ++i) ga[i] = config.alpha * row[i];
        add_outer(grads->q_proj, ga, step.q);
        const Vector back = matvec_transposed(model.q_proj, ga);
        for (std::size_t i = 0; i < d; ++i) gq[i] += back[i];
      }
      decoder_step_backward(model, st.enc, step, gh, gq, *grads, grad_enc);
    }
    if (grads) encode_backward(model, corpus.at(batch[si]).source, grad_enc, *grads);
  }

  out.total = overall_loss(out.mt, out.align, config.alpha);
  if (!std::isfinite(out.total)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "non-finite loss (L_MT=%g, L_align=%g) on a batch of %zu tokens", out.mt,
                  out.align, n_tokens);
    throw std::runtime_error(buf);
  }
  return out;
}

void Adam::step(ToyModel& model, ToyModel& grads) {
  auto params = model.parameters();
  auto gparams = grads.parameters();
  if (m.empty()) {
    for (const auto& p : params) {
      m.emplace_back(p.values->size(), 0.0);
      v.emplace_back(p.values->size(), 0.0);
    }
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = *params[p].values;
    const auto& g = *gparams[p].values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[p][i] = beta1 * m[p][i] + (1 - beta1) * g[i];
      v[p][i] = beta2 * v[p][i] + (1 - beta2) * g[i] * g[i];
      w[i] -= lr * (m[p][i] / c1) / (std::sqrt(v[p][i] / c2) + eps);
    }
  }
}

StepReport train_step(ToyModel& model, Adam& adam, const TrainInputs& inputs, const Batch& batch,
                      const TrainConfig& config, std::size_t step_index) {
  BatchRetrieval retrieval;
  const bool retrieve = config.uses_retrieval();
  if (retrieve) {
    if (!inputs.datastore || !inputs.positives)
      throw InvalidArgument("train_step: retrieval needs a datastore and positive keys");
    const ExactSearcher searcher(*inputs.datastore, Metric::kL2);
    retrieval = retrieve_batch(model, *inputs.train, batch, *inputs.datastore, searcher, *inputs.positives, config.k);
  }
  ToyModel grads = ToyModel::zeros_like(model);
  const BatchLoss loss = batch_loss_and_grad(model, *inputs.train, batch, retrieve ? &retrieval : nullptr, config, &grads);
  adam.step(model, grads);
  return {step_index, loss.mt, loss.align, loss.qk_cos, loss.retr_acc};
}

TrainResult train(const TrainInputs& inputs, const TrainConfig& config, const EpochCallback& on_epoch) {
  if (!inputs.train || inputs.train->empty()) throw InvalidArgument("train: empty training corpus");
  if (!(config.alpha >= 0)) throw InvalidArgument("train: alpha must be >= 0");
  if (!(config.tau > 0)) throw InvalidArgument("train: tau must be > 0");
  if (config.k == 0) throw InvalidArgument("train: k must be >= 1");
  if (!(config.lr > 0)) throw InvalidArgument("train: learning rate must be > 0");

  TrainResult result{ToyModel::init(inputs.model, mix_seed(config.seed, 5)), {}, {}, 0};
  std::optional<ToyModel> best;
  double best_acc = -1;
  Adam adam;
  adam.lr = config.lr;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(*inputs.train, config.batch_tokens, mix_seed(config.seed, 1000 + epoch));
    EpochReport er;
    er.epoch = epoch + 1;
    std::size_t tokens = 0;
    for (const Batch& b : batches) {
      const StepReport sr = train_step(result.model, adam, inputs, b, config, ++step);
      std::size_t n = 0;
      for (std::size_t s : b) n += (*inputs.train)[s].target.size() + 1;
      er.l_mt += sr.l_mt;
      er.l_align += config.align == AlignObjective::kMse ? sr.l_align * static_cast<double>(n) : sr.l_align;
      er.qk_cos += sr.qk_cos * static_cast<double>(n);
      er.retr_acc += sr.retr_acc * static_cast<double>(n);
      tokens += n;
      result.steps.push_back(sr);
    }
    const double nt = static_cast<double>(tokens);
    er.l_mt /= nt;
    er.l_align /= nt;
    er.qk_cos /= nt;
    er.retr_acc /= nt;
    if (inputs.valid && !inputs.valid->empty()) {
      DecodeConfig dc;
      dc.k = config.k;
      dc.mode = config.fusion ? DecodeMode::kPredFusion : DecodeMode::kBaseline;
      std::unique_ptr<ExactSearcher> searcher;
      if (config.fusion) searcher = std::make_unique<ExactSearcher>(*inputs.datastore, Metric::kL2);
      er.valid_acc = token_accuracy(result.model, searcher.get(), *inputs.valid, dc);
    }
    result.epochs.push_back(er);
    if (config.keep_best && er.valid_acc > best_acc) {
      best_acc = er.valid_acc;
      best = result.model;
      result.selected_epoch = er.epoch;
    }
    if (on_epoch) on_epoch(er);
  }
  if (best) {
    result.model = std::move(*best);
  } else {
    result.selected_epoch = config.epochs;
  }
  return result;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string to_json(const StepReport& r) {
  return "{\"step\":" + std::to_string(r.step) + ",\"L_MT\":" + fmt(r.l_mt) + ",\"L_align\":" + fmt(r.l_align) +
         ",\"qk_cos\":" + fmt(r.qk_cos) + ",\"retr_acc\":" + fmt(r.retr_acc) + "}";
}

std::string to_json(const EpochReport& r) {
  return "{\"epoch\":" + std::to_string(r.epoch) + ",\"L_MT\":" + fmt(r.l_mt) + ",\"L_align\":" + fmt(r.l_align) +
         ",\"qk_cos\":" + fmt(r.qk_cos) + ",\"retr_acc\":" + fmt(r.retr_acc) + ",\"valid_acc\":" + fmt(r.valid_acc) + "}";
}

}  // namespace kvmt
