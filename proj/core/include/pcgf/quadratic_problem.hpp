#pragma once

#include "pcgf/problems.hpp"

#include <limits>
#include <memory>
#include <optional>
#include <vector>

namespace pcgf {

template <typename T>
struct WeightedAtom {
  T value;
  double weight = 0.0;
};

/// Parameters of the strongly convex quadratic test family
///
///     g_w(x) = (A_mean + D_i) psi(x) + b_mean + beta_j,   w = (i, j)
///     f_v(y) = 1/2 |y - c_v|^2 + (cubic/3) sum_k y_k^3
///
/// with D_i drawn from `a_noise`, beta_j from `b_noise`, c_v from `targets`,
/// all independent. psi is the identity inside `clip_radius` and saturates
/// smoothly outside it (identity when the radius is infinite). Both noise
/// lists must have weighted mean zero; an empty list means no noise.
struct QuadraticFamilySpec {
  Matrix a_mean;  // m x n
  std::vector<WeightedAtom<Matrix>> a_noise;
  Vector b_mean;  // m
  std::vector<WeightedAtom<Vector>> b_noise;
  std::vector<WeightedAtom<Vector>> targets;
  double cubic = 0.0;
  double clip_radius = std::numeric_limits<double>::infinity();
};

/// The quadratic test family with closed-form moments.
///
/// With cubic = 0 and the minimizer inside the clip radius the composite
/// objective is 1/2 |A_mean x + b_mean - c_bar|^2 + const, its Hessian is
/// A_mean^T A_mean (validated SPD at construction) and the minimizer solves
/// the normal equations.
class QuadraticTestProblem final : public FiniteIndexProblem {
 public:
  explicit QuadraticTestProblem(QuadraticFamilySpec spec);
  ~QuadraticTestProblem() override;

  int dim_x() const override { return static_cast<int>(spec_.a_mean.cols()); }
  int dim_y() const override { return static_cast<int>(spec_.a_mean.rows()); }

  Vector g(AtomIndex w, const Vector& x) const override;
  Matrix grad_g(AtomIndex w, const Vector& x) const override;
  double f(AtomIndex v, const Vector& y) const override;
  Vector grad_f(AtomIndex v, const Vector& y) const override;
  const MomentOracle* moment_oracle() const override;

  const QuadraticFamilySpec& spec() const noexcept { return spec_; }

  /// argmin of the composite objective; empty when cubic != 0.
  const std::optional<Vector>& minimizer() const noexcept { return minimizer_; }
  /// A_mean^T A_mean.
  Matrix hessian() const;
  /// Weighted target mean c_bar and covariance Cov(c_v).
  const Vector& target_mean() const noexcept { return target_mean_; }
  const Matrix& target_covariance() const noexcept { return target_cov_; }

  /// Saturation map psi and its (symmetric) Jacobian.
  Vector clip(const Vector& x) const;
  Matrix clip_jacobian(const Vector& x) const;

  bool jacobian_noise_free() const noexcept { return spec_.a_noise.empty(); }

 private:
  friend class QuadraticOracle;

  AtomIndex a_index(AtomIndex w) const { return w / b_count(); }
  AtomIndex b_index(AtomIndex w) const { return w % b_count(); }
  std::size_t b_count() const { return spec_.b_noise.empty() ? 1 : spec_.b_noise.size(); }

  QuadraticFamilySpec spec_;
  Vector target_mean_;
  Matrix target_cov_;
  Matrix b_cov_;
  std::optional<Vector> minimizer_;
  std::unique_ptr<MomentOracle> oracle_;
};

/// The reference instances used by the experiments (n = m = 2).
///
/// `reference_quadratic_problem()` has noise in b_w and in the targets only,
/// so Sigma1 and Sigma2 are constant. The `_with_jacobian_noise` variant adds
/// a symmetric two-atom perturbation of A_w, which makes Sigma1 depend on x
/// and Sigma2 depend on (x, y).
QuadraticFamilySpec reference_quadratic_spec();
QuadraticFamilySpec reference_quadratic_spec_with_jacobian_noise();
std::shared_ptr<QuadraticTestProblem> reference_quadratic_problem();
std::shared_ptr<QuadraticTestProblem> reference_quadratic_problem_with_jacobian_noise();

}  // namespace pcgf
