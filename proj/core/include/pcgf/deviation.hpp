#pragma once

#include "pcgf/gaussian.hpp"
#include "pcgf/problems.hpp"
#include "pcgf/random.hpp"
#include "pcgf/trajectory.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pcgf {

/// The fast process with x frozen, in its own clock:
///     dy = (B1 - y) dt + sqrt(eps) Sigma1 dW,   mu = N(B1, (eps/2) A1).
struct FrozenOu {
  Vector mean;    // B1(x)
  Matrix a1;      // A1(x)
  Matrix sigma1;  // psd_factor(A1(x))
  double eps = 0.0;

  int dim() const noexcept { return static_cast<int>(mean.size()); }
  GaussianMeasure invariant() const { return {mean, Matrix(0.5 * eps * a1)}; }
};

FrozenOu frozen_ou(const MomentEvaluator& moments, const Vector& x, double eps);

using ScalarField = std::function<double(const Vector&)>;

/// L h(y) = (eps/2) div(A1 grad h) + (B1 - y) . grad h by central finite
/// differences with step `step` * (1 + |y|_inf).
double ou_generator_apply(const FrozenOu& ou, const ScalarField& h, const Vector& y, double step = 1e-4);
double ou_generator_apply(const MomentEvaluator& moments, const Vector& x, double eps, const ScalarField& h,
                          const Vector& y, double step = 1e-4);

enum class CorrectorMethod { closed_form, semigroup_quadrature };

struct CorrectorOptions {
  /// Unset: closed form when the right-hand side is quadratic in y,
  /// semigroup quadrature otherwise.
  std::optional<CorrectorMethod> method;
  /// Gauss-Hermite order per dimension inside each transition expectation.
  int gauss_hermite_order = 8;
  /// The time integral stops once |P_t h| < truncation at all probes for
  /// `consecutive_small` consecutive time nodes.
  double truncation = 1e-10;
  int consecutive_small = 3;
  /// Gauss-Kronrod (7, 15) panels of this length in t, bisected until the
  /// Gauss/Kronrod gap at every probe is below panel_tolerance.
  double panel_length = 1.0;
  double panel_tolerance = 1e-13;
  int max_bisections = 10;
  std::size_t max_time_nodes = 20000;
  /// Probes drive the adaptivity: the mean and mean +- probe_radius e_i, plus
  /// any extra points.
  double probe_radius = 10.0;
  std::vector<Vector> extra_probes;
  /// Relative central-difference step for grad_y of quadrature correctors.
  double gradient_step = 1e-4;
};

/// Solution u of L u = h centered under mu, u = -integral_0^inf P_t h dt.
class Corrector {
 public:
  int coordinate() const noexcept { return coordinate_; }
  CorrectorMethod method() const noexcept { return method_; }
  const FrozenOu& ou() const noexcept { return ou_; }

  double value(const Vector& y) const;
  double operator()(const Vector& y) const { return value(y); }
  Vector grad_y(const Vector& y) const;

  /// Time nodes of the semigroup integral (empty for closed form).
  const std::vector<double>& time_nodes() const noexcept { return t_nodes_; }
  /// The constant subtracted to center u.
  double centering() const noexcept { return centering_; }

 private:
  friend Corrector solve_poisson(const FrozenOu&, ScalarField, const CorrectorOptions&, int);

  double raw_value(const Vector& y) const;

  int coordinate_ = 0;
  CorrectorMethod method_ = CorrectorMethod::closed_form;
  FrozenOu ou_;
  double gradient_step_ = 1e-4;
  // closed form: u = -g.e - e^T Q e / 2 + (eps/4) tr(A1 Q), e = y - B1
  Vector g_;
  Matrix q_;
  // semigroup quadrature
  ScalarField h_;
  std::vector<double> t_nodes_;
  std::vector<double> t_weights_;
  std::vector<Vector> gh_nodes_;
  std::vector<double> gh_weights_;
  double centering_ = 0.0;
};

/// Second-order model h(B1 + e) ~ c + g.e + e^T Q e fitted by differences,
/// with `exact` set when it reproduces h at check points to 1e-9.
struct QuadraticModel {
  double constant = 0.0;
  Vector linear;
  Matrix quadratic;
  bool exact = false;
};
QuadraticModel fit_quadratic(const FrozenOu& ou, const ScalarField& h);

/// Solves L u = h for a centered h. Throws ConfigurationError if closed form
/// is requested for a non-quadratic or non-centered h, ConvergenceError if
/// the time integral does not settle within max_time_nodes.
Corrector solve_poisson(const FrozenOu& ou, ScalarField h, const CorrectorOptions& options = {}, int coordinate = 0);

/// Corrector u_k for h_k(y) = [B2(x, y)]_k - [B2-bar^eps(x)]_k.
Corrector solve_corrector(const MomentEvaluator& moments, const Vector& x, double eps, int k,
                          const CorrectorOptions& options = {});
std::vector<Corrector> solve_correctors(const MomentEvaluator& moments, const Vector& x, double eps,
                                        const CorrectorOptions& options = {});

enum class CovarianceMode { average_of_product, product_of_averages };

struct DeviationOptions {
  CorrectorOptions corrector;
  /// N1: the displayed integrand averages grad u before the product.
  CovarianceMode n1_mode = CovarianceMode::product_of_averages;
  /// N2: quadratic variation of the slow noise, i.e. the average of A2.
  CovarianceMode n2_mode = CovarianceMode::average_of_product;
  /// Order of the Gauss-Hermite rule used for averages under mu.
  int average_order = 12;
  /// Use the problem's closed-form Jacobian when present.
  bool closed_form_jacobian = true;
  double jacobian_step = 1e-5;
};

/// Local (time-derivative) covariance rates and the drift Jacobian at x.
struct DeviationRates {
  Matrix jacobian;
  Matrix n1;
  Matrix n2;
};

Matrix n1_rate(const MomentEvaluator& moments, const Vector& x, double eps, const DeviationOptions& options = {});
Matrix n2_rate(const MomentEvaluator& moments, const Vector& x, double eps, const DeviationOptions& options = {});
DeviationRates deviation_rates(const MomentEvaluator& moments, const Vector& x, double eps,
                               const DeviationOptions& options = {});

/// M(x) = grad_x B2-bar^eps(x): closed form when available (and allowed),
/// otherwise central differences with step jacobian_step * (1 + |x|).
Matrix drift_jacobian(const MomentEvaluator& moments, const Vector& x, double eps,
                      const DeviationOptions& options = {});

/// A^eps(t) and the N2 covariance along an averaged path, by the
/// trapezoid rule on its grid; entry i is the integral up to times[i].
std::vector<Matrix> n1_covariance(const MomentEvaluator& moments, const Trajectory& averaged, double eps,
                                  const DeviationOptions& options = {});
std::vector<Matrix> n2_covariance(const MomentEvaluator& moments, const Trajectory& averaged, double eps,
                                  CovarianceMode mode, const DeviationOptions& options = {});

/// Everything needed to simulate Z^eps on the averaged path's grid.
struct LimitDeviationPlan {
  std::vector<double> times;
  std::vector<Matrix> jacobians;          // M at every node
  std::vector<Matrix> n1;                 // cumulative N1 covariance per node
  std::vector<Matrix> n2;                 // cumulative N2 covariance per node
  std::vector<Matrix> increment_factors;  // psd factor of the per-step increment
  std::size_t steps() const noexcept { return increment_factors.size(); }
};

/// Throws NotPsdError when a covariance increment is not PSD.
LimitDeviationPlan build_limit_deviation_plan(const MomentEvaluator& moments, const Trajectory& averaged, double eps,
                                              const DeviationOptions& options = {});

/// Euler scheme for dZ = M(X^eps_t) Z dt + dN1 + dN2, Z(0) = 0.
Trajectory simulate_limit_deviation(const LimitDeviationPlan& plan, RandomStream& rng, std::size_t record_stride = 1);
Trajectory simulate_limit_deviation(const MomentEvaluator& moments, const Trajectory& averaged, double eps,
                                    RandomStream& rng, const DeviationOptions& options = {});

/// Cov Z^eps(t) at the plan's nodes from P' = M P + P M^T + R(t), RK4 with
/// M interpolated linearly and R constant on each step.
std::vector<Matrix> limit_covariance(const LimitDeviationPlan& plan);

/// Z(t) = (X_coupled(t) - X_averaged(t)) / sqrt(eta). Throws AlignmentError
/// when the time grids differ.
Trajectory rescaled_deviation(const Trajectory& coupled, const Trajectory& averaged, double eta);

/// Empirical law of a family of paths on a common grid.
struct DeviationStats {
  std::vector<double> times;
  std::vector<Vector> mean;
  std::vector<Matrix> covariance;
  std::size_t replicas = 0;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static DeviationStats from_json(const std::string& text);
};

/// Running sums over paths, added in a fixed order so the result is
/// reproducible.
class DeviationAccumulator {
 public:
  void add(const Trajectory& path);
  void merge(const DeviationAccumulator& other);
  std::size_t count() const noexcept { return count_; }
  DeviationStats finish(std::uint64_t seed = 0) const;

 private:
  std::vector<double> times_;
  std::vector<Vector> sum_;
  std::vector<Matrix> sum_sq_;
  std::size_t count_ = 0;
};

std::string to_string(CorrectorMethod method);
std::string to_string(CovarianceMode mode);
CovarianceMode covariance_mode_from_string(const std::string& name);

}  // namespace pcgf
