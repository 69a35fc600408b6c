// SPDX-License-Identifier: Apache-2.0
#include "cmcl/learner.hpp"

#include <cstring>

#include "cmcl/errors.hpp"

namespace cmcl {

LearnerState LearnerState::identity(std::size_t dim, const std::vector<ModalityId>& modalities) {
  LearnerState s;
  s.dim = dim;
  const auto d = static_cast<Eigen::Index>(dim);
  for (const ModalityId& m : modalities) {
    s.weights[m] = Matrix::Identity(d, d);
    s.moments[m] = AdamMoments{Matrix::Zero(d, d), Matrix::Zero(d, d), 0};
    s.last_trained[m] = -1;
  }
  return s;
}

const Matrix& LearnerState::w(const ModalityId& m) const {
  auto it = weights.find(m);
  if (it == weights.end()) throw DomainError("no learner for modality '" + m.name + "'");
  return it->second;
}

Matrix& LearnerState::w(const ModalityId& m) {
  auto it = weights.find(m);
  if (it == weights.end()) throw DomainError("no learner for modality '" + m.name + "'");
  return it->second;
}

std::uint64_t weight_hash(const Matrix& w) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::int64_t shape[2] = {w.rows(), w.cols()};
  mix(shape, sizeof shape);
  mix(w.data(), static_cast<std::size_t>(w.size()) * sizeof(double));
  return h;
}

}  // namespace cmcl
