// SPDX-License-Identifier: Apache-2.0
//
// Dual-sided null-space gradient projection.
//
// For a modality m trained against partner m', the raw gradient is replaced by
//
//     dW = G - L * G * R
//
// where R projects onto the span of m's historical prior inputs and L onto
// the span of the outputs its historical partners generated. The induced
// change of every stored alignment Z'^T (W_a^T W_b) Z then vanishes to first
// order in the learning rate.
#pragma once

#include <cstddef>
#include <map>
#include <optional>

#include "cmcl/features.hpp"
#include "cmcl/linalg.hpp"

namespace cmcl {

/// Running uncentered covariances per modality.
///
/// input_cov(m) is the count-weighted mean of Z* Z*^T / n over the prior
/// features m saw; partner_output_cov(m) is the same over the end-of-step
/// outputs of whichever modality m was paired with.
class CovarianceStore {
 public:
  struct Entry {
    Matrix input_cov;
    Matrix partner_output_cov;
    std::size_t input_count = 0;
    std::size_t partner_count = 0;
  };

  explicit CovarianceStore(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  bool has_history(const ModalityId& m) const;
  /// Zero entry with zero counts for modalities never seen.
  Entry entry(const ModalityId& m) const;
  const std::map<ModalityId, Entry>& entries() const { return entries_; }

 private:
  friend void update_covariances(CovarianceStore&, const ModalityPair&, const Matrix&,
                                 const Matrix&, const Matrix&, const Matrix&);
  Entry& slot(const ModalityId& m);

  std::size_t dim_;
  std::map<ModalityId, Entry> entries_;
};

/// Folds one step into the store. zstar_* are the prior inputs, zout_* the
/// outputs W_t * Z* of the just-trained learners; all d x n_t.
/// Throws DimensionError on shape mismatch.
void update_covariances(CovarianceStore& store, const ModalityPair& pair,
                        const Matrix& zstar_a, const Matrix& zstar_b, const Matrix& zout_a,
                        const Matrix& zout_b);

/// Adds n * cov_step into a running mean holding `count` samples.
Matrix running_mean_update(const Matrix& mean, std::size_t count, const Matrix& step_cov,
                           std::size_t step_count);

struct ModalityProjectors {
  Projector right_input;
  Projector left_partner_output;
};

struct ProjectorSet {
  std::map<ModalityId, ModalityProjectors> by_modality;

  const ModalityProjectors& at(const ModalityId& m) const;
};

ProjectorSet build_projectors(const CovarianceStore& store, const ModalityPair& pair,
                              double lambda_min);

/// G - L G R with L = left_partner_output, R = right_input, evaluated in
/// factored form through the projector bases. Returns G unchanged when either
/// side has rank zero.
Matrix project_gradient(const Matrix& grad, const ModalityProjectors& projs);

/// Global update W~ = W_a^T G_b + G_a^T W_b - eta * G_a^T G_b.
Matrix global_update_matrix(const Matrix& w_a, const Matrix& w_b, const Matrix& grad_a,
                            const Matrix& grad_b, double eta);

/// W~ - P' W~ P.
Matrix project_global(const Matrix& w_tilde, const Matrix& p_left, const Matrix& p_right);

enum class UpdateRole {
  kFrozen,     // absent from the current pair: zero gradient, no covariance update
  kProjected,  // present with history: gradient projected
  kFree,       // present without history: projection is the identity
};

/// Roles for every modality in previous ∪ current.
std::map<ModalityId, UpdateRole> step_pair_mask(const std::optional<ModalityPair>& previous,
                                                const ModalityPair& current,
                                                const CovarianceStore& store);

}  // namespace cmcl
