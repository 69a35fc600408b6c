// SPDX-License-Identifier: Apache-2.0
//
// InfoNCE over linearly projected prior features, Z = W * Z*, with analytic
// gradients for both modality weight matrices.
#pragma once

#include "cmcl/linalg.hpp"

namespace cmcl {

struct ContrastiveConfig {
  double tau = 0.07;
  /// Average the a->b and b->a softmax directions (CLIP style). When false
  /// only rows of Z_a^T Z_b are normalized.
  bool symmetric = true;
  /// Cosine similarities instead of raw inner products.
  bool normalize_in_loss = false;

  void validate() const;
};

struct GradPair {
  Matrix grad_a;
  Matrix grad_b;
};

struct LossAndGrads {
  double loss = 0.0;
  GradPair grads;
};

/// Loss and its gradient with respect to an n x n logit matrix whose
/// diagonal holds the positive pairs.
struct LogitLoss {
  double loss = 0.0;
  Matrix grad;
};

LogitLoss info_nce_logits(const Matrix& logits, bool symmetric);

/// W * Z*. Throws DimensionError unless W is square and W.cols == Z*.rows.
Matrix project_features(const Matrix& w, const Matrix& z_star);

/// Mean over samples of -log softmax of the positive pair.
/// Throws DimensionError for unequal column counts or n == 0.
double info_nce_loss(const Matrix& z_a, const Matrix& z_b, const ContrastiveConfig& cfg);

LossAndGrads loss_and_grads(const Matrix& w_a, const Matrix& w_b, const Matrix& zstar_a,
                            const Matrix& zstar_b, const ContrastiveConfig& cfg);

/// Central differences (L(W + hE_ij) - L(W - hE_ij)) / 2h, entry by entry.
GradPair finite_diff_grad(const Matrix& w_a, const Matrix& w_b, const Matrix& zstar_a,
                          const Matrix& zstar_b, const ContrastiveConfig& cfg, double h);

}  // namespace cmcl
