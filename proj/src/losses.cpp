#include "kvmt/losses.hpp"

#include <cmath>
#include <string>

namespace kvmt {

LossGrad mt_loss(const Matrix& logits, std::span<const TokenId> gold) {
  if (logits.rows() != gold.size()) throw InvalidArgument("mt_loss: logits/gold length mismatch");
  LossGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  for (std::size_t t = 0; t < gold.size(); ++t) {
    if (gold[t] >= logits.cols()) throw InvalidArgument("mt_loss: gold token out of range: " + std::to_string(gold[t]));
    const auto row = logits.row(t);
    const double lse = log_sum_exp(row);
    out.loss += lse - row[gold[t]];
    auto g = out.grad.row(t);
    for (std::size_t v = 0; v < row.size(); ++v) g[v] = std::exp(row[v] - lse);
    g[gold[t]] -= 1.0;
  }
  return out;
}

namespace {

Matrix normalized_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double n = norm(std::span<const double>(r.data(), r.size()));
    if (n > 0)
      for (double& x : r) x /= n;
  }
  return out;
}

}  // namespace

LossGrad nca_loss(const Matrix& queries, const Matrix& positives, const Matrix& negatives, double tau,
                  bool normalize) {
  if (!(tau > 0)) throw InvalidArgument("nca_loss: tau must be > 0");
  if (positives.rows() != queries.rows()) throw InvalidArgument("nca_loss: query/positive count mismatch");
  const std::size_t dim = queries.cols();
  if (positives.cols() != dim || (negatives.rows() > 0 && negatives.cols() != dim))
    throw InvalidArgument("nca_loss: dimension mismatch");

  const Matrix q = normalize ? normalized_rows(queries) : queries;
  const Matrix pos = normalize ? normalized_rows(positives) : positives;
  const Matrix neg = normalize ? normalized_rows(negatives) : negatives;

  LossGrad out{0.0, Matrix(queries.rows(), dim)};
  if (negatives.rows() == 0) return out;

  Vector scores(neg.rows() + 1);
  for (std::size_t t = 0; t < q.rows(); ++t) {
    const auto qt = q.row(t);
    scores[0] = dot(qt, pos.row(t)) / tau;
    for (std::size_t j = 0; j < neg.rows(); ++j) scores[j + 1] = dot(qt, neg.row(j)) / tau;
    const Vector p = softmax(scores);
    out.loss += log_sum_exp(scores) - scores[0];

    // ∂loss/∂q̂ = (Σ_j p_j k_j − k_pos) / τ
    Vector g(dim, 0.0);
    const auto kp = pos.row(t);
    for (std::size_t i = 0; i < dim; ++i) g[i] = (p[0] - 1.0) * kp[i];
    for (std::size_t j = 0; j < neg.rows(); ++j) {
      const auto kj = neg.row(j);
      for (std::size_t i = 0; i < dim; ++i) g[i] += p[j + 1] * kj[i];
    }
    for (double& x : g) x /= tau;

    auto gt = out.grad.row(t);
    if (normalize) {
      // q̂ = q/‖q‖  ⇒  ∂/∂q = (g − q̂(q̂ᵀg)) / ‖q‖
      const double n = norm(queries.row(t));
      if (n > 0) {
        const double proj = dot(qt, std::span<const double>(g));
        for (std::size_t i = 0; i < dim; ++i) gt[i] = (g[i] - qt[i] * proj) / n;
      }
    } else {
      std::copy(g.begin(), g.end(), gt.begin());
    }
  }
  return out;
}

LossGrad mse_loss(const Matrix& queries, const Matrix& positives) {
  if (queries.rows() != positives.rows() || queries.cols() != positives.cols())
    throw InvalidArgument("mse_loss: dimension mismatch");
  LossGrad out{0.0, Matrix(queries.rows(), queries.cols())};
  if (queries.rows() == 0) return out;
  const double inv_b = 1.0 / static_cast<double>(queries.rows());
  for (std::size_t t = 0; t < queries.rows(); ++t) {
    const auto q = queries.row(t);
    const auto k = positives.row(t);
    auto g = out.grad.row(t);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double diff = q[i] - k[i];
      out.loss += diff * diff * inv_b;
      g[i] = 2.0 * diff * inv_b;
    }
  }
  return out;
}

double overall_loss(double mt, double align, double alpha) {
  if (!(alpha >= 0)) throw InvalidArgument("overall_loss: alpha must be >= 0");
  return mt + alpha * align;
}

}  // namespace kvmt
