#pragma once

#include "pcgf/types.hpp"

namespace pcgf {

struct PsdFactorOptions {
  /// Added as jitter * I before factorizing; lets callers factor degenerate
  /// covariances they know to be singular.
  double jitter = 0.0;
  /// Eigenvalues below -reject_tolerance * ||C|| raise NotPsdError.
  double reject_tolerance = 1e-6;
  /// Allowed ||C - C^T||_F / ||C||_F before the input is rejected as
  /// nonsymmetric.
  double symmetry_tolerance = 1e-8;
};

/// Symmetric PSD square root S of a symmetric PSD matrix C, so S * S = C.
///
/// C is symmetrized as (C + C^T)/2 first. ||C|| is the spectral norm (largest
/// absolute eigenvalue). Negative eigenvalues above -reject_tolerance*||C||
/// are treated as round-off and clipped to 0.
///
/// Throws NotPsdError if an eigenvalue is below -reject_tolerance*||C|| and
/// ConfigurationError if C is not square or not symmetric within tolerance.
Matrix psd_factor(const Matrix& covariance, const PsdFactorOptions& options = {});

/// Smallest eigenvalue of the symmetrized matrix.
double min_eigenvalue(const Matrix& symmetric);

/// Spectral norm of the symmetrized matrix.
double spectral_norm(const Matrix& symmetric);

}  // namespace pcgf
