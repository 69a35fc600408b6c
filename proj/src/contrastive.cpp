// SPDX-License-Identifier: Apache-2.0
#include "cmcl/contrastive.hpp"

#include <cmath>
#include <string>

#include "cmcl/errors.hpp"

namespace cmcl {

namespace {

// Row-wise softmax cross-entropy with the diagonal as target.
// Returns the mean loss and writes (softmax - I) / n into grad.
double row_cross_entropy(const Matrix& s, Matrix& grad) {
  const Eigen::Index n = s.rows();
  grad.resize(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = s.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double e = std::exp(s(i, j) - mx);
      grad(i, j) = e;
      sum += e;
    }
    total += std::log(sum) + mx - s(i, i);
    grad.row(i) /= sum;
    grad(i, i) -= 1.0;
  }
  grad /= static_cast<double>(n);
  return total / static_cast<double>(n);
}

struct Normalized {
  Matrix u;
  Vector norms;
};

Normalized normalize_cols(const Matrix& z) {
  Normalized out{z, Vector(z.cols())};
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double n = z.col(j).norm();
    if (n == 0.0) throw DomainError("info_nce: zero embedding column under cosine mode");
    out.norms(j) = n;
    out.u.col(j) /= n;
  }
  return out;
}

// Backpropagates dL/dU through U = Z / ||z|| column-wise.
Matrix normalize_backward(const Normalized& nz, const Matrix& d_u) {
  Matrix d_z(d_u.rows(), d_u.cols());
  for (Eigen::Index j = 0; j < d_u.cols(); ++j) {
    const double radial = nz.u.col(j).dot(d_u.col(j));
    d_z.col(j) = (d_u.col(j) - radial * nz.u.col(j)) / nz.norms(j);
  }
  return d_z;
}

void check_pair(const Matrix& z_a, const Matrix& z_b) {
  if (z_a.cols() != z_b.cols() || z_a.rows() != z_b.rows()) {
    throw DimensionError("info_nce: feature tables differ in shape");
  }
  if (z_a.cols() == 0) throw DimensionError("info_nce: empty batch");
}

}  // namespace

void ContrastiveConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("tau must be > 0");
}

LogitLoss info_nce_logits(const Matrix& logits, bool symmetric) {
  if (logits.rows() != logits.cols() || logits.rows() == 0) {
    throw DimensionError("info_nce_logits: logits must be square and non-empty");
  }
  LogitLoss out;
  const double ab = row_cross_entropy(logits, out.grad);
  if (!symmetric) {
    out.loss = ab;
    return out;
  }
  Matrix grad_ba;
  const double ba = row_cross_entropy(logits.transpose(), grad_ba);
  out.loss = 0.5 * (ab + ba);
  out.grad = 0.5 * (out.grad + grad_ba.transpose());
  return out;
}

Matrix project_features(const Matrix& w, const Matrix& z_star) {
  if (w.rows() != w.cols() || w.cols() != z_star.rows()) {
    throw DimensionError("project_features: W is " + std::to_string(w.rows()) + "x" +
                         std::to_string(w.cols()) + ", Z* has " +
                         std::to_string(z_star.rows()) + " rows");
  }
  return w * z_star;
}

double info_nce_loss(const Matrix& z_a, const Matrix& z_b, const ContrastiveConfig& cfg) {
  cfg.validate();
  check_pair(z_a, z_b);
  Matrix s;
  if (cfg.normalize_in_loss) {
    s = normalize_cols(z_a).u.transpose() * normalize_cols(z_b).u;
  } else {
    s = z_a.transpose() * z_b;
  }
  return info_nce_logits(s / cfg.tau, cfg.symmetric).loss;
}

LossAndGrads loss_and_grads(const Matrix& w_a, const Matrix& w_b, const Matrix& zstar_a,
                            const Matrix& zstar_b, const ContrastiveConfig& cfg) {
  cfg.validate();
  const Matrix z_a = project_features(w_a, zstar_a);
  const Matrix z_b = project_features(w_b, zstar_b);
  check_pair(z_a, z_b);

  LossAndGrads out;
  Matrix d_za, d_zb;
  if (cfg.normalize_in_loss) {
    const Normalized na = normalize_cols(z_a);
    const Normalized nb = normalize_cols(z_b);
    const LogitLoss ll = info_nce_logits(na.u.transpose() * nb.u / cfg.tau, cfg.symmetric);
    out.loss = ll.loss;
    d_za = normalize_backward(na, nb.u * ll.grad.transpose() / cfg.tau);
    d_zb = normalize_backward(nb, na.u * ll.grad / cfg.tau);
  } else {
    const LogitLoss ll = info_nce_logits(z_a.transpose() * z_b / cfg.tau, cfg.symmetric);
    out.loss = ll.loss;
    d_za = z_b * ll.grad.transpose() / cfg.tau;
    d_zb = z_a * ll.grad / cfg.tau;
  }
  out.grads.grad_a = d_za * zstar_a.transpose();
  out.grads.grad_b = d_zb * zstar_b.transpose();
  return out;
}

GradPair finite_diff_grad(const Matrix& w_a, const Matrix& w_b, const Matrix& zstar_a,
                          const Matrix& zstar_b, const ContrastiveConfig& cfg, double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff_grad: h must be > 0");
  auto loss_at = [&](const Matrix& a, const Matrix& b) {
    return info_nce_loss(project_features(a, zstar_a), project_features(b, zstar_b), cfg);
  };
  GradPair out{Matrix::Zero(w_a.rows(), w_a.cols()), Matrix::Zero(w_b.rows(), w_b.cols())};
  Matrix probe = w_a;
  for (Eigen::Index j = 0; j < w_a.cols(); ++j) {
    for (Eigen::Index i = 0; i < w_a.rows(); ++i) {
      const double keep = probe(i, j);
      probe(i, j) = keep + h;
      const double up = loss_at(probe, w_b);
      probe(i, j) = keep - h;
      const double down = loss_at(probe, w_b);
      probe(i, j) = keep;
      out.grad_a(i, j) = (up - down) / (2.0 * h);
    }
  }
  probe = w_b;
  for (Eigen::Index j = 0; j < w_b.cols(); ++j) {
    for (Eigen::Index i = 0; i < w_b.rows(); ++i) {
      const double keep = probe(i, j);
      probe(i, j) = keep + h;
      const double up = loss_at(w_a, probe);
      probe(i, j) = keep - h;
      const double down = loss_at(w_a, probe);
      probe(i, j) = keep;
      out.grad_b(i, j) = (up - down) / (2.0 * h);
    }
  }
  return out;
}

}  // namespace cmcl
