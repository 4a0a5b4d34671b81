#pragma once

#include <span>

#include "kvmt/datastore.hpp"
#include "kvmt/linalg.hpp"

namespace kvmt {

/// Loss value plus the gradient with respect to the first matrix argument.
struct LossGrad {
  double loss = 0;
  Matrix grad;
};

/// Token-summed negative log-likelihood. grad row t = softmax(logits_t) − onehot(gold_t).
LossGrad mt_loss(const Matrix& logits, std::span<const TokenId> gold);

/// Per-token InfoNCE summed over tokens. Row t of `queries` is scored against
/// its positive (row t of `positives`) and every row of `negatives`:
///   loss_t = −s_pos + log(exp s_pos + Σ exp s_neg),  s = qᵀk / τ.
/// Keys get no gradient. With `normalize`, scores use cosines instead of raw dots.
LossGrad nca_loss(const Matrix& queries, const Matrix& positives, const Matrix& negatives, double tau,
                  bool normalize = false);

/// Mean over tokens of ‖q_t − k_t‖².
LossGrad mse_loss(const Matrix& queries, const Matrix& positives);

/// L_MT + α·L_align
double overall_loss(double mt, double align, double alpha);

}  // namespace kvmt
