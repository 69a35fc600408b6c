// SPDX-License-Identifier: Apache-2.0
#include "cmcl/dns.hpp"

#include <string>

#include "cmcl/errors.hpp"

namespace cmcl {

bool CovarianceStore::has_history(const ModalityId& m) const {
  auto it = entries_.find(m);
  return it != entries_.end() && (it->second.input_count > 0 || it->second.partner_count > 0);
}

CovarianceStore::Entry CovarianceStore::entry(const ModalityId& m) const {
  auto it = entries_.find(m);
  if (it != entries_.end()) return it->second;
  const auto d = static_cast<Eigen::Index>(dim_);
  return Entry{Matrix::Zero(d, d), Matrix::Zero(d, d), 0, 0};
}

CovarianceStore::Entry& CovarianceStore::slot(const ModalityId& m) {
  auto it = entries_.find(m);
  if (it == entries_.end()) {
    const auto d = static_cast<Eigen::Index>(dim_);
    it = entries_.emplace(m, Entry{Matrix::Zero(d, d), Matrix::Zero(d, d), 0, 0}).first;
  }
  return it->second;
}

namespace {

// (1/n) Z Z^T through a symmetric rank update, half the flops of a product.
Matrix second_moment(const Matrix& z) {
  const Eigen::Index d = z.rows();
  Matrix lower = Matrix::Zero(d, d);
  lower.selfadjointView<Eigen::Lower>().rankUpdate(z, 1.0 / static_cast<double>(z.cols()));
  return lower.selfadjointView<Eigen::Lower>();
}

}  // namespace

Matrix running_mean_update(const Matrix& mean, std::size_t count, const Matrix& step_cov,
                           std::size_t step_count) {
  const std::size_t total = count + step_count;
  if (total == 0) return mean;
  const double old_w = static_cast<double>(count) / static_cast<double>(total);
  const double new_w = static_cast<double>(step_count) / static_cast<double>(total);
  Matrix out = old_w * mean + new_w * step_cov;
  return 0.5 * (out + out.transpose());
}

void update_covariances(CovarianceStore& store, const ModalityPair& pair,
                        const Matrix& zstar_a, const Matrix& zstar_b, const Matrix& zout_a,
                        const Matrix& zout_b) {
  const auto d = static_cast<Eigen::Index>(store.dim());
  const Eigen::Index n = zstar_a.cols();
  require_shape(zstar_a, d, n, "update_covariances: zstar_a");
  require_shape(zstar_b, d, n, "update_covariances: zstar_b");
  require_shape(zout_a, d, n, "update_covariances: zout_a");
  require_shape(zout_b, d, n, "update_covariances: zout_b");
  if (n == 0) return;
  const auto nt = static_cast<std::size_t>(n);

  auto fold = [&](const ModalityId& m, const Matrix& own_in, const Matrix& partner_out) {
    CovarianceStore::Entry& e = store.slot(m);
    e.input_cov = running_mean_update(e.input_cov, e.input_count, second_moment(own_in), nt);
    e.partner_output_cov =
        running_mean_update(e.partner_output_cov, e.partner_count, second_moment(partner_out), nt);
    e.input_count += nt;
    e.partner_count += nt;
  };
  fold(pair.first, zstar_a, zout_b);
  fold(pair.second, zstar_b, zout_a);
}

const ModalityProjectors& ProjectorSet::at(const ModalityId& m) const {
  auto it = by_modality.find(m);
  if (it == by_modality.end()) {
    throw DomainError("ProjectorSet: no projectors for modality '" + m.name + "'");
  }
  return it->second;
}

ProjectorSet build_projectors(const CovarianceStore& store, const ModalityPair& pair,
                              double lambda_min) {
  ProjectorSet set;
  for (const ModalityId& m : {pair.first, pair.second}) {
    if (!store.has_history(m)) {
      set.by_modality[m] = ModalityProjectors{Projector::zero(store.dim()),
                                              Projector::zero(store.dim())};
      continue;
    }
    const CovarianceStore::Entry e = store.entry(m);
    set.by_modality[m] = ModalityProjectors{range_projector(e.input_cov, lambda_min),
                                            range_projector(e.partner_output_cov, lambda_min)};
  }
  return set;
}

Matrix project_gradient(const Matrix& grad, const ModalityProjectors& projs) {
  const Projector& left = projs.left_partner_output;
  const Projector& right = projs.right_input;
  const auto d = static_cast<Eigen::Index>(left.dim);
  if (grad.rows() != d || grad.cols() != static_cast<Eigen::Index>(right.dim)) {
    throw DimensionError("project_gradient: gradient is " + std::to_string(grad.rows()) + "x" +
                         std::to_string(grad.cols()) + ", projectors are " +
                         std::to_string(left.dim) + "/" + std::to_string(right.dim));
  }
  if (left.retained_rank == 0 || right.retained_rank == 0) return grad;
  const Matrix core = left.basis.transpose() * grad * right.basis;
  return grad - left.basis * core * right.basis.transpose();
}

Matrix global_update_matrix(const Matrix& w_a, const Matrix& w_b, const Matrix& grad_a,
                            const Matrix& grad_b, double eta) {
  const Eigen::Index d = w_a.rows();
  require_shape(w_a, d, d, "global_update_matrix: w_a");
  require_shape(w_b, d, d, "global_update_matrix: w_b");
  require_shape(grad_a, d, d, "global_update_matrix: grad_a");
  require_shape(grad_b, d, d, "global_update_matrix: grad_b");
  if (!(eta >= 0.0)) throw DomainError("global_update_matrix: eta < 0");
  return w_a.transpose() * grad_b + grad_a.transpose() * w_b - eta * grad_a.transpose() * grad_b;
}

Matrix project_global(const Matrix& w_tilde, const Matrix& p_left, const Matrix& p_right) {
  const Eigen::Index d = w_tilde.rows();
  require_shape(w_tilde, d, d, "project_global: w_tilde");
  require_shape(p_left, d, d, "project_global: p_left");
  require_shape(p_right, d, d, "project_global: p_right");
  return w_tilde - p_left * w_tilde * p_right;
}

std::map<ModalityId, UpdateRole> step_pair_mask(const std::optional<ModalityPair>& previous,
                                                const ModalityPair& current,
                                                const CovarianceStore& store) {
  std::map<ModalityId, UpdateRole> roles;
  if (previous) {
    roles[previous->first] = UpdateRole::kFrozen;
    roles[previous->second] = UpdateRole::kFrozen;
  }
  for (const ModalityId& m : {current.first, current.second}) {
    roles[m] = store.has_history(m) ? UpdateRole::kProjected : UpdateRole::kFree;
  }
  return roles;
}

}  // namespace cmcl
