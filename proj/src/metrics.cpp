// SPDX-License-Identifier: Apache-2.0
#include "cmcl/metrics.hpp"

#include <algorithm>
#include <string>

#include "cmcl/errors.hpp"

namespace cmcl {

Matrix alignment(const Matrix& z_a, const Matrix& z_b) {
  if (z_a.rows() != z_b.rows() || z_a.cols() != z_b.cols()) {
    throw DimensionError("alignment: feature tables differ in shape");
  }
  return z_a.transpose() * z_b;
}

double recall_at_k(const Matrix& a, std::size_t k) {
  if (a.rows() != a.cols()) throw DimensionError("recall_at_k: alignment must be square");
  const auto n = static_cast<std::size_t>(a.rows());
  if (k < 1 || k > n) {
    throw DomainError("recall_at_k: k = " + std::to_string(k) + " outside [1, " +
                      std::to_string(n) + "]");
  }
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double diag = a(i, i);
    std::size_t rank = 1;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (a(i, j) > diag || (j < i && a(i, j) == diag)) ++rank;
    }
    if (rank <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double accuracy(const Matrix& queries, const Matrix& prototypes,
                const std::vector<std::uint32_t>& labels) {
  if (queries.rows() != prototypes.rows()) {
    throw DimensionError("accuracy: queries and prototypes differ in dimension");
  }
  if (static_cast<std::size_t>(queries.cols()) != labels.size()) {
    throw DimensionError("accuracy: label count differs from query count");
  }
  const auto c = static_cast<std::size_t>(prototypes.cols());
  if (c < 2) throw DomainError("accuracy: needs at least two classes");
  if (labels.empty()) throw DomainError("accuracy: no queries");
  const Matrix scores = prototypes.transpose() * queries;  // C x n
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.cols(); ++i) {
    const std::uint32_t y = labels[static_cast<std::size_t>(i)];
    if (y >= c) throw DomainError("accuracy: label " + std::to_string(y) + " out of range");
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < scores.rows(); ++j) {
      if (scores(j, i) > scores(best, i)) best = j;
    }
    if (static_cast<std::uint32_t>(best) == y) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::optional<double> bwt(const ScoreTable& r) {
  const std::size_t t_count = r.size();
  if (t_count < 2) return std::nullopt;
  const auto& last = r.back();
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t i = 0; i + 1 < t_count; ++i) {
    if (i >= last.size() || i >= r[i].size()) continue;
    if (!last[i] || !r[i][i]) continue;
    sum += *last[i] - *r[i][i];
    ++terms;
  }
  if (terms == 0) return std::nullopt;
  return sum / static_cast<double>(terms);
}

double stability_bound(double eta, double z_norm_a, double z_norm_b, double grad_norm_a,
                       double grad_norm_b) {
  const double f = 2.0 * grad_norm_a * grad_norm_b + grad_norm_a * grad_norm_a +
                   grad_norm_b * grad_norm_b;
  return eta * eta * z_norm_a * z_norm_b * f;
}

double bilinear_spectral_norm(const Matrix& z_a, const Matrix& d, const Matrix& z_b) {
  if (z_a.cols() <= z_a.rows() && z_b.cols() <= z_b.rows()) {
    return spectral_norm(z_a.transpose() * d * z_b);
  }
  // Z^T = Q R with orthonormal Q, so ||Z_a^T D Z_b|| = ||R_a D R_b^T||.
  auto triangular = [](const Matrix& z) -> Matrix {
    if (z.cols() <= z.rows()) return z.transpose();
    Eigen::HouseholderQR<Matrix> qr(z.transpose());
    return qr.matrixQR().topRows(z.rows()).triangularView<Eigen::Upper>();
  };
  return spectral_norm(triangular(z_a) * d * triangular(z_b).transpose());
}

StabilityProbe stability_probe(const Matrix& zstar_a, const Matrix& zstar_b,
                               const Matrix& w_a_prev, const Matrix& w_b_prev,
                               const Matrix& w_a_now, const Matrix& w_b_now, double eta,
                               const std::vector<std::pair<double, double>>& grad_norms) {
  StabilityProbe p;
  const Matrix diff = w_a_now.transpose() * w_b_now - w_a_prev.transpose() * w_b_prev;
  p.deviation = bilinear_spectral_norm(zstar_a, diff, zstar_b);
  p.deviation_fro = frobenius_norm(zstar_a.transpose() * diff * zstar_b);
  p.z_norm_a = spectral_norm(zstar_a);
  p.z_norm_b = spectral_norm(zstar_b);
  for (const auto& [ga, gb] : grad_norms) {
    const double b = stability_bound(eta, p.z_norm_a, p.z_norm_b, ga, gb);
    if (b > p.bound_rhs) {
      p.bound_rhs = b;
      p.grad_norm_a = ga;
      p.grad_norm_b = gb;
    }
  }
  return p;
}

PlasticityProbe plasticity_probe(double loss_before, double loss_after, const GradPair& raw,
                                 const GradPair& applied, double eta) {
  PlasticityProbe p;
  p.inner_a = (raw.grad_a.array() * applied.grad_a.array()).sum();
  p.inner_b = (raw.grad_b.array() * applied.grad_b.array()).sum();
  p.grad_sq_a = raw.grad_a.squaredNorm();
  p.grad_sq_b = raw.grad_b.squaredNorm();
  p.loss_delta = loss_after - loss_before;
  p.first_order = -eta * (p.inner_a + p.inner_b);
  p.high_order = p.loss_delta - p.first_order;
  return p;
}

Matrix encode(const LearnerState& state, const ModalityId& m, const Matrix& z_star) {
  return project_features(state.w(m), z_star);
}

std::vector<std::size_t> retrieve_best(const Matrix& queries, const Matrix& gallery) {
  if (queries.rows() != gallery.rows()) {
    throw DimensionError("retrieve_best: query and gallery dimensions differ");
  }
  if (gallery.cols() == 0) throw DomainError("retrieve_best: empty gallery");
  const Matrix s = gallery.transpose() * queries;
  std::vector<std::size_t> best(static_cast<std::size_t>(queries.cols()), 0);
  for (Eigen::Index q = 0; q < s.cols(); ++q) {
    Eigen::Index arg = 0;
    for (Eigen::Index g = 1; g < s.rows(); ++g) {
      if (s(g, q) > s(arg, q)) arg = g;
    }
    best[static_cast<std::size_t>(q)] = static_cast<std::size_t>(arg);
  }
  return best;
}

}  // namespace cmcl
