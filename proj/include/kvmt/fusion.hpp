#pragma once

#include <span>
#include <vector>

#include "kvmt/datastore.hpp"
#include "kvmt/linalg.hpp"

namespace kvmt {

/// Gate parameters for representation-level fusion.
struct FusionParams {
  Matrix w1;  // d × d, applied to the translation state
  Matrix w2;  // d × d, applied to the aggregated retrieval vector
  Vector b;   // d

  static FusionParams zeros(std::size_t d) { return {Matrix(d, d), Matrix(d, d), Vector(d, 0.0)}; }
  std::size_t dim() const { return b.size(); }

  bool operator==(const FusionParams&) const = default;
};

/// p(y) ∝ Σ_{i: v_i = y} exp(−d_i / T) over the vocabulary.
Vector knn_distribution(const NeighborSet& neighbors, double temperature, std::size_t vocab_size);

/// λ·p_mt + (1 − λ)·p_knn
Vector interpolate(std::span<const double> p_mt, std::span<const double> p_knn, double lambda);

struct Attention {
  Vector m;
  Vector weights;
};

/// weights_j = softmax_j(qᵀe_j) with no scaling; m = Σ_j weights_j e_j.
Attention attend_values(std::span<const double> q, const std::vector<Vector>& embeddings);

/// Accumulates ∂L/∂q into grad_q and ∂L/∂e_j into grad_embeddings[j].
void attend_values_backward(std::span<const double> q, const std::vector<Vector>& embeddings,
                            const Attention& fwd, std::span<const double> grad_m,
                            std::span<double> grad_q, std::vector<Vector>& grad_embeddings);

struct Gate {
  Vector z;
  Vector g;
};

/// g = σ(W1·h + W2·m + b); z = g⊙m + (1 − g)⊙h.
Gate gate_fuse(std::span<const double> h, std::span<const double> m, const FusionParams& params);

/// Accumulates gradients for h, m and the gate parameters.
void gate_fuse_backward(std::span<const double> h, std::span<const double> m, const FusionParams& params,
                        const Gate& fwd, std::span<const double> grad_z, std::span<double> grad_h,
                        std::span<double> grad_m, FusionParams& grad_params);

/// softmax(W_e · z)
Vector output_distribution(std::span<const double> z, const Matrix& w_e);

}  // namespace kvmt
