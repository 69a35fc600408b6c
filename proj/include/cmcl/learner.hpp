// SPDX-License-Identifier: Apache-2.0
//
// Per-modality linear heads Z = W * Z* and their optimizer state.
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "cmcl/features.hpp"
#include "cmcl/linalg.hpp"

namespace cmcl {

struct AdamMoments {
  Matrix first;
  Matrix second;
  std::size_t steps = 0;
};

struct LearnerState {
  std::size_t dim = 0;
  std::map<ModalityId, Matrix> weights;
  std::map<ModalityId, AdamMoments> moments;
  /// Index of the last sequence step that trained the modality; -1 if never.
  std::map<ModalityId, long> last_trained;

  /// Every modality starts from the d x d identity.
  static LearnerState identity(std::size_t dim, const std::vector<ModalityId>& modalities);

  bool has(const ModalityId& m) const { return weights.count(m) != 0; }
  /// Throws DomainError for an unknown modality.
  const Matrix& w(const ModalityId& m) const;
  Matrix& w(const ModalityId& m);
};

/// FNV-1a over the raw bytes of the entries; equal hashes mean bit-equal W.
std::uint64_t weight_hash(const Matrix& w);

}  // namespace cmcl
