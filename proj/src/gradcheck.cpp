#include "kvmt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "kvmt/fusion.hpp"
#include "kvmt/losses.hpp"
#include "kvmt/model.hpp"
#include "kvmt/trainer.hpp"

namespace kvmt {

GradCheckResult grad_check(const std::function<double()>& loss_fn, const std::vector<GradParam>& params,
                           const GradCheckOptions& options) {
  if (!(options.step > 0)) throw InvalidArgument("grad_check: step must be > 0");
  Rng rng(options.seed);
  GradCheckResult res;
  for (const GradParam& p : params) {
    if (p.grad->size() != p.values->size()) throw InvalidArgument("grad_check: gradient size mismatch for " + p.name);
    std::vector<std::size_t> coords(p.values->size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords > 0 && coords.size() > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      double& x = (*p.values)[i];
      const double saved = x;
      x = saved + options.step;
      const double up = loss_fn();
      x = saved - options.step;
      const double down = loss_fn();
      x = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw std::runtime_error("grad_check: non-finite loss");
      const double numeric = (up - down) / (2 * options.step);
      const double analytic = (*p.grad)[i];
      const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      ++res.checked;
      if (rel > res.max_rel_err || res.checked == 1) {
        res.max_rel_err = rel;
        res.worst_param = p.name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

namespace {

constexpr double kLossTol = 1e-4;
constexpr double kEndToEndTol = 1e-3;

Matrix random_matrix(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = g(rng);
  return m;
}

Vector random_vector(std::size_t n, double scale, Rng& rng) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(n);
  for (double& x : v) x = g(rng);
  return v;
}

GradCheckResult check_mt(Rng& rng) {
  Matrix logits = random_matrix(4, 7, 1.0, rng);
  const std::vector<TokenId> gold = {0, 3, 6, 2};
  const Matrix grad = mt_loss(logits, gold).grad;
  return grad_check([&] { return mt_loss(logits, gold).loss; }, {{"logits", &logits.data(), &grad.data()}});
}

GradCheckResult check_mse(Rng& rng) {
  Matrix q = random_matrix(5, 8, 1.0, rng);
  const Matrix k = random_matrix(5, 8, 1.0, rng);
  const Matrix grad = mse_loss(q, k).grad;
  return grad_check([&] { return mse_loss(q, k).loss; }, {{"queries", &q.data(), &grad.data()}});
}

GradCheckResult check_nca(Rng& rng, bool normalize) {
  Matrix q = random_matrix(4, 8, 0.5, rng);
  const Matrix pos = random_matrix(4, 8, 0.5, rng);
  const Matrix neg = random_matrix(12, 8, 0.5, rng);
  const double tau = normalize ? 0.2 : 0.5;
  const Matrix grad = nca_loss(q, pos, neg, tau, normalize).grad;
  return grad_check([&] { return nca_loss(q, pos, neg, tau, normalize).loss; }, {{"queries", &q.data(), &grad.data()}});
}

// NCA on Q_proj·q, differentiated with respect to both Q_proj and the raw queries.
GradCheckResult check_nca_projection(Rng& rng) {
  const std::size_t d = 8, dk = 6, n = 4;
  Matrix proj = random_matrix(dk, d, 0.4, rng);
  Matrix raw = random_matrix(n, d, 0.5, rng);
  const Matrix pos = random_matrix(n, dk, 0.5, rng);
  const Matrix neg = random_matrix(10, dk, 0.5, rng);
  const double tau = 0.3;
  auto projected = [&] {
    Matrix out(n, dk);
    for (std::size_t t = 0; t < n; ++t) {
      const Vector p = matvec(proj, raw.row(t));
      std::copy(p.begin(), p.end(), out.row(t).begin());
    }
    return out;
  };
  const Matrix g = nca_loss(projected(), pos, neg, tau).grad;
  Matrix g_proj(dk, d), g_raw(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    add_outer(g_proj, g.row(t), raw.row(t));
    const Vector back = matvec_transposed(proj, g.row(t));
    std::copy(back.begin(), back.end(), g_raw.row(t).begin());
  }
  return grad_check([&] { return nca_loss(projected(), pos, neg, tau).loss; },
                    {{"Q_proj", &proj.data(), &g_proj.data()}, {"q", &raw.data(), &g_raw.data()}});
}

// Linear read-out w·m of the attention output.
GradCheckResult check_attend(Rng& rng) {
  const std::size_t d = 6;
  Vector q = random_vector(d, 0.7, rng);
  std::vector<Vector> emb;
  for (int j = 0; j < 5; ++j) emb.push_back(random_vector(d, 0.7, rng));
  const Vector w = random_vector(d, 1.0, rng);
  auto loss = [&] {
    const Attention a = attend_values(q, emb);
    return dot(std::span<const double>(w), std::span<const double>(a.m));
  };
  const Attention a = attend_values(q, emb);
  Vector gq(d, 0.0);
  std::vector<Vector> ge;
  attend_values_backward(q, emb, a, w, gq, ge);
  std::vector<GradParam> params{{"q", &q, &gq}};
  for (std::size_t j = 0; j < emb.size(); ++j) params.push_back({"e" + std::to_string(j), &emb[j], &ge[j]});
  return grad_check(loss, params);
}

GradCheckResult check_gate(Rng& rng) {
  const std::size_t d = 6;
  Vector h = random_vector(d, 1.0, rng);
  Vector m = random_vector(d, 1.0, rng);
  FusionParams fp{random_matrix(d, d, 0.4, rng), random_matrix(d, d, 0.4, rng), random_vector(d, 0.3, rng)};
  const Vector w = random_vector(d, 1.0, rng);
  auto loss = [&] {
    const Gate g = gate_fuse(h, m, fp);
    return dot(std::span<const double>(w), std::span<const double>(g.z));
  };
  const Gate g = gate_fuse(h, m, fp);
  Vector gh(d, 0.0), gm(d, 0.0);
  FusionParams gp = FusionParams::zeros(d);
  gate_fuse_backward(h, m, fp, g, w, gh, gm, gp);
  return grad_check(loss, {{"h", &h, &gh},
                           {"m", &m, &gm},
                           {"W1", &fp.w1.data(), &gp.w1.data()},
                           {"W2", &fp.w2.data(), &gp.w2.data()},
                           {"b", &fp.b, &gp.b}});
}

// Whole combined objective for a two-sentence batch on a small model with a
// non-square Q_proj and non-zero gate parameters.
GradCheckResult check_train_step(Rng& rng, AlignObjective align, bool fusion) {
  ModelConfig mc;
  mc.d = 10;
  mc.d_ff = 12;
  mc.d_key = 8;
  mc.src_vocab = 10;
  mc.tgt_vocab = 10;
  ToyModel model = ToyModel::init(mc, rng());
  model.fusion = {random_matrix(10, 10, 0.3, rng), random_matrix(10, 10, 0.3, rng), random_vector(10, 0.2, rng)};
  for (double& x : model.w_e.data()) x *= 3;

  const Corpus corpus = {{{2, 5, 7}, {4, 9, 3, 2}}, {{8, 3, 4, 6}, {6, 6, 2}}};
  std::vector<TokenSeq> targets;
  for (const auto& p : corpus) {
    targets.push_back(p.target);
    targets.back().push_back(kEos);
  }
  const RawDatastore ds = generate_oracle_datastore(targets, mc.d_key, 0.3, rng());
  const AlignedPositives positives(ds, corpus);
  const ExactSearcher searcher(ds, Metric::kL2);

  TrainConfig cfg;
  cfg.align = align;
  cfg.fusion = fusion;
  cfg.alpha = 0.7;
  cfg.tau = 0.5;
  cfg.k = 3;
  const Batch batch = {0, 1};
  const BatchRetrieval retrieval = retrieve_batch(model, corpus, batch, ds, searcher, positives, cfg.k);

  ToyModel grads = ToyModel::zeros_like(model);
  batch_loss_and_grad(model, corpus, batch, &retrieval, cfg, &grads);
  std::vector<GradParam> params;
  auto mp = model.parameters();
  auto gp = grads.parameters();
  for (std::size_t i = 0; i < mp.size(); ++i) params.push_back({mp[i].name, mp[i].values, gp[i].values});
  return grad_check([&] { return batch_loss_and_grad(model, corpus, batch, &retrieval, cfg, nullptr).total; }, params);
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradSuiteEntry> out;
  auto add = [&](const char* name, const GradCheckResult& r, double tol) {
    out.push_back({name, r.max_rel_err, tol, r.worst_param + "[" + std::to_string(r.worst_index) + "]"});
  };
  add("mt_loss", check_mt(rng), kLossTol);
  add("mse_loss", check_mse(rng), kLossTol);
  add("nca_loss", check_nca(rng, false), kLossTol);
  add("nca_loss_normalized", check_nca(rng, true), kLossTol);
  add("nca_loss_through_q_proj", check_nca_projection(rng), kLossTol);
  add("attend_values", check_attend(rng), kLossTol);
  add("gate_fuse", check_gate(rng), kLossTol);
  add("train_step_nca_fusion", check_train_step(rng, AlignObjective::kNca, true), kEndToEndTol);
  add("train_step_mse_fusion", check_train_step(rng, AlignObjective::kMse, true), kEndToEndTol);
  add("train_step_nca_plain", check_train_step(rng, AlignObjective::kNca, false), kEndToEndTol);
  return out;
}

}  // namespace kvmt
