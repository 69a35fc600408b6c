// SPDX-License-Identifier: Apache-2.0
#include "cmcl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cmcl/errors.hpp"

namespace cmcl {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) {
    throw NumericalError(std::string(what) + ": non-finite entry");
  }
}

void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                   std::string_view what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(std::string(what) + ": expected " +
                         std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + shape_str(m));
  }
}

Projector Projector::zero(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  Projector p;
  p.dim = dim;
  p.matrix = Matrix::Zero(d, d);
  p.basis = Matrix::Zero(d, 0);
  return p;
}

Projector Projector::identity(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  Projector p;
  p.dim = dim;
  p.matrix = Matrix::Identity(d, d);
  p.basis = Matrix::Identity(d, d);
  p.retained_rank = dim;
  return p;
}

SpectralDecomposition spectral_decompose(const Matrix& c) {
  if (c.rows() != c.cols()) {
    throw DimensionError("spectral_decompose: matrix is " + shape_str(c) +
                         ", expected square");
  }
  require_finite(c, "spectral_decompose");
  const Eigen::Index d = c.rows();
  SpectralDecomposition out;
  if (d == 0) {
    out.eigenvectors = Matrix(0, 0);
    out.eigenvalues = Vector(0);
    return out;
  }
  const double asym = (c - c.transpose()).norm();
  const double scale = std::max(1.0, c.norm());
  if (asym > kSymmetryTolerance * static_cast<double>(d) * scale) {
    throw DomainError("spectral_decompose: asymmetric input (||C - C^T||_F = " +
                      std::to_string(asym) + ")");
  }
  const Matrix sym = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("spectral_decompose: eigensolver did not converge");
  }
  // Eigen sorts ascending; reverse to descending.
  out.eigenvalues = solver.eigenvalues().reverse();
  out.eigenvectors = solver.eigenvectors().rowwise().reverse();
  out.eigenvalues = out.eigenvalues.cwiseMax(0.0);
  return out;
}

Matrix pseudo_inverse(const Matrix& a) {
  require_finite(a, "pseudo_inverse");
  if (a.size() == 0) return Matrix::Zero(a.cols(), a.rows());
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sigma = svd.singularValues();
  const double cutoff = static_cast<double>(std::max(a.rows(), a.cols())) *
                        kEps * (sigma.size() > 0 ? sigma(0) : 0.0);
  Vector inv = Vector::Zero(sigma.size());
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) > cutoff) inv(i) = 1.0 / sigma(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Projector range_projector(const Matrix& c, double lambda_min) {
  if (!(lambda_min >= 0.0) || !std::isfinite(lambda_min)) {
    throw DomainError("range_projector: lambda_min must be finite and >= 0");
  }
  if (c.rows() != c.cols()) {
    throw DimensionError("range_projector: covariance is " + shape_str(c));
  }
  // spectral_decompose clamps, so check definiteness on the raw spectrum.
  require_finite(c, "range_projector");
  const Eigen::Index d = c.rows();
  const double asym = (c - c.transpose()).norm();
  if (asym > kSymmetryTolerance * static_cast<double>(d) * std::max(1.0, c.norm())) {
    throw DomainError("range_projector: asymmetric covariance");
  }
  if (d == 0) return Projector::zero(0);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (c + c.transpose()));
  if (solver.info() != Eigen::Success) {
    throw NumericalError("range_projector: eigensolver did not converge");
  }
  const Vector& ascending = solver.eigenvalues();
  const double lmax = ascending(d - 1);
  const double lmin_seen = ascending(0);
  if (lmin_seen < -1e-8 * std::max(1.0, std::abs(lmax))) {
    throw DomainError("range_projector: covariance is not PSD (eigenvalue " +
                      std::to_string(lmin_seen) + ")");
  }

  Projector p;
  p.dim = static_cast<std::size_t>(d);
  p.lambda_min = lambda_min;
  const double exact_cutoff = static_cast<double>(d) * kEps * std::max(lmax, 0.0);
  Eigen::Index keep = 0;
  // Collect from the top of the spectrum downwards.
  for (Eigen::Index i = d - 1; i >= 0; --i) {
    const double ev = ascending(i);
    const bool retained = lambda_min == 0.0 ? ev > exact_cutoff : ev >= lambda_min;
    if (!retained) break;
    ++keep;
  }
  p.retained_rank = static_cast<std::size_t>(keep);
  p.basis = solver.eigenvectors().rightCols(keep).rowwise().reverse();
  if (keep == 0) {
    p.matrix = Matrix::Zero(d, d);
  } else {
    Matrix full = p.basis * p.basis.transpose();
    p.matrix = 0.5 * (full + full.transpose());
  }
  return p;
}

double spectral_norm(const Matrix& a) {
  require_finite(a, "spectral_norm");
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

double frobenius_norm(const Matrix& a) { return a.norm(); }

std::size_t numerical_rank_psd(const Matrix& c) {
  const SpectralDecomposition sd = spectral_decompose(c);
  if (sd.eigenvalues.size() == 0) return 0;
  const double cutoff = static_cast<double>(c.rows()) * kEps * sd.eigenvalues(0);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < sd.eigenvalues.size(); ++i) {
    if (sd.eigenvalues(i) > cutoff) ++rank;
  }
  return rank;
}

}  // namespace cmcl
