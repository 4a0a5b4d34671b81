#include "kvmt/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace kvmt {

Vector knn_distribution(const NeighborSet& neighbors, double temperature, std::size_t vocab_size) {
  if (!(temperature > 0)) throw InvalidArgument("knn_distribution: temperature must be > 0");
  if (neighbors.empty()) throw InvalidArgument("knn_distribution: no neighbors");
  double dmin = neighbors.front().distance;
  for (const Neighbor& n : neighbors) {
    if (n.value >= vocab_size) throw InvalidArgument("knn_distribution: value outside vocabulary");
    dmin = std::min(dmin, n.distance);
  }
  Vector p(vocab_size, 0.0);
  double total = 0;
  for (const Neighbor& n : neighbors) {
    const double w = std::exp(-(n.distance - dmin) / temperature);
    p[n.value] += w;
    total += w;
  }
  for (double& x : p) x /= total;
  return p;
}

Vector interpolate(std::span<const double> p_mt, std::span<const double> p_knn, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("interpolate: lambda must be in [0, 1]");
  if (p_mt.size() != p_knn.size()) throw InvalidArgument("interpolate: dimension mismatch");
  Vector out(p_mt.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * p_mt[i] + (1.0 - lambda) * p_knn[i];
  return out;
}

Attention attend_values(std::span<const double> q, const std::vector<Vector>& embeddings) {
  if (embeddings.empty()) throw InvalidArgument("attend_values: no value embeddings");
  Vector scores(embeddings.size());
  for (std::size_t j = 0; j < embeddings.size(); ++j) {
    if (embeddings[j].size() != q.size()) throw InvalidArgument("attend_values: dimension mismatch");
    scores[j] = dot(q, std::span<const double>(embeddings[j]));
  }
  Attention a;
  a.weights = softmax(scores);
  a.m.assign(q.size(), 0.0);
  for (std::size_t j = 0; j < embeddings.size(); ++j)
    for (std::size_t i = 0; i < q.size(); ++i) a.m[i] += a.weights[j] * embeddings[j][i];
  return a;
}

void attend_values_backward(std::span<const double> q, const std::vector<Vector>& embeddings,
                            const Attention& fwd, std::span<const double> grad_m,
                            std::span<double> grad_q, std::vector<Vector>& grad_embeddings) {
  const std::size_t k = embeddings.size();
  grad_embeddings.resize(k, Vector(q.size(), 0.0));
  // ∂L/∂w_j = grad_m · e_j, then through the softmax.
  Vector gw(k);
  double mean = 0;
  for (std::size_t j = 0; j < k; ++j) {
    gw[j] = dot(grad_m, std::span<const double>(embeddings[j]));
    mean += fwd.weights[j] * gw[j];
  }
  for (std::size_t j = 0; j < k; ++j) {
    const double gs = fwd.weights[j] * (gw[j] - mean);
    auto& ge = grad_embeddings[j];
    if (ge.size() != q.size()) ge.assign(q.size(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
      grad_q[i] += gs * embeddings[j][i];
      ge[i] += gs * q[i] + fwd.weights[j] * grad_m[i];
    }
  }
}

Gate gate_fuse(std::span<const double> h, std::span<const double> m, const FusionParams& params) {
  const std::size_t d = h.size();
  if (m.size() != d || params.dim() != d || params.w1.cols() != d || params.w2.cols() != d)
    throw InvalidArgument("gate_fuse: dimension mismatch");
  const Vector a = matvec(params.w1, h);
  const Vector b = matvec(params.w2, m);
  Gate out;
  out.g.resize(d);
  out.z.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    out.g[i] = sigmoid(a[i] + b[i] + params.b[i]);
    out.z[i] = out.g[i] * m[i] + (1.0 - out.g[i]) * h[i];
  }
  return out;
}

void gate_fuse_backward(std::span<const double> h, std::span<const double> m, const FusionParams& params,
                        const Gate& fwd, std::span<const double> grad_z, std::span<double> grad_h,
                        std::span<double> grad_m, FusionParams& grad_params) {
  const std::size_t d = h.size();
  Vector gpre(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double g = fwd.g[i];
    grad_m[i] += grad_z[i] * g;
    grad_h[i] += grad_z[i] * (1.0 - g);
    gpre[i] = grad_z[i] * (m[i] - h[i]) * g * (1.0 - g);
    grad_params.b[i] += gpre[i];
  }
  add_outer(grad_params.w1, gpre, h);
  add_outer(grad_params.w2, gpre, m);
  const Vector gh = matvec_transposed(params.w1, gpre);
  const Vector gm = matvec_transposed(params.w2, gpre);
  for (std::size_t i = 0; i < d; ++i) {
    grad_h[i] += gh[i];
    grad_m[i] += gm[i];
  }
}

Vector output_distribution(std::span<const double> z, const Matrix& w_e) {
  return softmax(matvec(w_e, z));
}

}  // namespace kvmt
