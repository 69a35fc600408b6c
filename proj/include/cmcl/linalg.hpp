// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels shared by every other module: symmetric eigendecomposition,
// Moore-Penrose pseudo-inverse, range projectors built from PSD covariances,
// and matrix norms. All values are 64-bit.
#pragma once

#include <cstddef>
#include <string_view>

#include <Eigen/Dense>

namespace cmcl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Throws NumericalError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);

/// Throws DimensionError unless `m` is rows x cols.
void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                   std::string_view what);

/// Eigenpairs of a symmetric PSD matrix, eigenvalues descending and clamped
/// at zero; column i of `eigenvectors` pairs with `eigenvalues[i]`.
struct SpectralDecomposition {
  Matrix eigenvectors;
  Vector eigenvalues;
};

/// Orthogonal projector onto the dominant eigenspace of a covariance.
///
/// `basis` holds the retained eigenvectors (dim x retained_rank) so callers
/// can apply the projector in factored form; `matrix` equals basis*basis^T,
/// symmetrized.
struct Projector {
  std::size_t dim = 0;
  Matrix matrix;
  Matrix basis;
  std::size_t retained_rank = 0;
  double lambda_min = 0.0;

  static Projector zero(std::size_t dim);
  static Projector identity(std::size_t dim);
};

/// Relative tolerance used to accept a matrix as symmetric.
inline constexpr double kSymmetryTolerance = 1e-10;

/// Eigendecomposition of a symmetric PSD matrix.
///
/// The input is symmetrized as (C + C^T)/2 before decomposition; tiny
/// negative eigenvalues from round-off are clamped to zero.
/// Throws DimensionError for non-square input, DomainError when
/// ||C - C^T||_F > 1e-10 * d * max(1, ||C||_F), NumericalError on non-finite
/// input or solver failure.
SpectralDecomposition spectral_decompose(const Matrix& c);

/// Moore-Penrose pseudo-inverse via SVD. Singular values at or below
/// max(rows, cols) * eps * sigma_max are treated as zero.
Matrix pseudo_inverse(const Matrix& a);

/// Projector onto eigenvectors of `c` whose eigenvalue is >= lambda_min.
///
/// lambda_min == 0 selects the exact mode: eigenvalues above
/// d * eps * lambda_max are retained. Throws DomainError for asymmetric or
/// indefinite input (an eigenvalue below -1e-8 * max(1, lambda_max)) or a
/// negative threshold.
Projector range_projector(const Matrix& c, double lambda_min);

/// Largest singular value.
double spectral_norm(const Matrix& a);

double frobenius_norm(const Matrix& a);

/// Number of eigenvalues of the PSD matrix `c` above d * eps * lambda_max.
std::size_t numerical_rank_psd(const Matrix& c);

}  // namespace cmcl
