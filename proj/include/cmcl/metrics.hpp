// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: alignment matrices, retrieval and classification scores,
// backward transfer, and the two probes that track the stability bound and
// the higher-order part of the loss change.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "cmcl/contrastive.hpp"
#include "cmcl/learner.hpp"
#include "cmcl/linalg.hpp"

namespace cmcl {

/// Z_a^T Z_b. Throws DimensionError unless both are d x n.
Matrix alignment(const Matrix& z_a, const Matrix& z_b);

/// Share of rows whose diagonal entry ranks within the top k. Rank counts
/// entries strictly greater than the diagonal, plus equal ones at a lower
/// column index. Throws DomainError unless 1 <= k <= n.
double recall_at_k(const Matrix& a, std::size_t k);

/// Nearest-prototype classification by maximum inner product, ties to the
/// lower class index. queries d x n, prototypes d x C.
/// Throws DomainError for labels >= C or C < 2.
double accuracy(const Matrix& queries, const Matrix& prototypes,
                const std::vector<std::uint32_t>& labels);

/// r[t][i] is the score on dataset i after training step t (i <= t).
/// Missing cells mean the metric does not apply to that dataset.
using ScoreTable = std::vector<std::vector<std::optional<double>>>;

/// Mean over i < T-1 of r[T-1][i] - r[i][i], skipping datasets where the
/// metric is undefined. nullopt for T < 2 or when no dataset qualifies.
std::optional<double> bwt(const ScoreTable& r);

struct StabilityProbe {
  std::size_t step = 0;  // model step t; features come from step t-1
  double deviation = 0.0;
  double deviation_fro = 0.0;
  double bound_rhs = 0.0;
  double z_norm_a = 0.0;
  double z_norm_b = 0.0;
  /// Gradient spectral norms of the update that attains bound_rhs.
  double grad_norm_a = 0.0;
  double grad_norm_b = 0.0;
};

/// eta^2 * ||Z_a|| * ||Z_b|| * (2ab + a^2 + b^2).
double stability_bound(double eta, double z_norm_a, double z_norm_b, double grad_norm_a,
                       double grad_norm_b);

/// ||Z_a^T D Z_b||_2 with D = W'_a^T W'_b - W_a^T W_b, without forming n x n
/// products when n exceeds d.
double bilinear_spectral_norm(const Matrix& z_a, const Matrix& d, const Matrix& z_b);

/// Deviation of the step-(t-1) alignment between models t-1 and t.
/// grad_norms holds (||grad_a||_2, ||grad_b||_2) for each update of step t;
/// the reported bound is the largest per-update value.
StabilityProbe stability_probe(const Matrix& zstar_a, const Matrix& zstar_b,
                               const Matrix& w_a_prev, const Matrix& w_b_prev,
                               const Matrix& w_a_now, const Matrix& w_b_now, double eta,
                               const std::vector<std::pair<double, double>>& grad_norms);

struct PlasticityProbe {
  double loss_delta = 0.0;
  double first_order = 0.0;
  double high_order = 0.0;
  double inner_a = 0.0;  // <grad_a, dW_a>
  double inner_b = 0.0;
  double grad_sq_a = 0.0;  // ||grad_a||_F^2
  double grad_sq_b = 0.0;
};

/// Splits the loss change of one update on a fixed batch into its first-order
/// part -eta * (<G_a, dW_a> + <G_b, dW_b>) and the remainder.
PlasticityProbe plasticity_probe(double loss_before, double loss_after, const GradPair& raw,
                                 const GradPair& applied, double eta);

/// W^m * Z*. Throws DomainError for a modality the state does not hold.
Matrix encode(const LearnerState& state, const ModalityId& m, const Matrix& z_star);

/// For each query column the gallery column with the largest inner product,
/// ties to the lower index.
std::vector<std::size_t> retrieve_best(const Matrix& queries, const Matrix& gallery);

struct StepScores {
  double recall1 = 0.0;
  double recall5 = 0.0;
  double recall10 = 0.0;
  std::optional<double> acc;
};

}  // namespace cmcl
