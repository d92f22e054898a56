#include "pcgf/psd.hpp"

#include "pcgf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pcgf {

namespace {

Eigen::SelfAdjointEigenSolver<Matrix> eigen_of(const Matrix& c) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(c, Eigen::ComputeEigenvectors);
}

}  // namespace

Matrix psd_factor(const Matrix& covariance, const PsdFactorOptions& options) {
  if (covariance.rows() != covariance.cols()) {
    throw ConfigurationError("psd_factor: matrix must be square");
  }
  const int k = static_cast<int>(covariance.rows());
  if (k == 0) return Matrix(0, 0);

  const double frob = covariance.norm();
  const double asym = (covariance - covariance.transpose()).norm();
  if (asym > options.symmetry_tolerance * std::max(frob, 1e-300)) {
    std::ostringstream msg;
    msg << "psd_factor: matrix is not symmetric (||C - C^T|| = " << asym << ")";
    throw ConfigurationError(msg.str());
  }

  Matrix c = 0.5 * (covariance + covariance.transpose());
  if (options.jitter != 0.0) c.diagonal().array() += options.jitter;
  if (c.isZero(0.0)) return Matrix::Zero(k, k);

  const auto solver = eigen_of(c);
  Vector lambda = solver.eigenvalues();
  const double scale = lambda.cwiseAbs().maxCoeff();
  for (int i = 0; i < k; ++i) {
    if (lambda[i] < -options.reject_tolerance * scale) {
      std::ostringstream msg;
      msg << "psd_factor: matrix is not positive semidefinite (eigenvalue " << lambda[i]
          << ", spectral norm " << scale << ")";
      throw NotPsdError(msg.str(), lambda[i]);
    }
    lambda[i] = lambda[i] > 0.0 ? std::sqrt(lambda[i]) : 0.0;
  }
  const Matrix& v = solver.eigenvectors();
  Matrix s = v * lambda.asDiagonal() * v.transpose();
  return 0.5 * (s + s.transpose());
}

double min_eigenvalue(const Matrix& symmetric) {
  if (symmetric.size() == 0) return 0.0;
  Matrix c = 0.5 * (symmetric + symmetric.transpose());
  return Eigen::SelfAdjointEigenSolver<Matrix>(c, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

double spectral_norm(const Matrix& symmetric) {
  if (symmetric.size() == 0) return 0.0;
  Matrix c = 0.5 * (symmetric + symmetric.transpose());
  return Eigen::SelfAdjointEigenSolver<Matrix>(c, Eigen::EigenvaluesOnly)
      .eigenvalues()
      .cwiseAbs()
      .maxCoeff();
}

}  // namespace pcgf
