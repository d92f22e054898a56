#pragma once

#include "pcgf/deviation.hpp"
#include "pcgf/dynamics.hpp"
#include "pcgf/gaussian.hpp"
#include "pcgf/problems.hpp"
#include "pcgf/replicas.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pcgf {

/// Least squares fit of log y = slope log x + intercept.
struct PowerLawFit {
  double slope = 0.0;
  double intercept = 0.0;
  /// Largest |residual| in natural-log units.
  double max_residual = 0.0;
  /// False when max_residual > 0.5.
  bool reliable = true;
};

/// Throws DomainError for nonpositive values or fewer than 3 points.
PowerLawFit fit_power_law(const std::vector<double>& xs, const std::vector<double>& ys);

struct SweepPoint {
  double param = 0.0;
  double error_mean = 0.0;
  double error_se = 0.0;
  std::size_t replicas = 0;
  /// Within 3x the discretization floor; excluded from the fit.
  bool flagged = false;
  std::size_t divergent = 0;
  /// Noise-free reference error used for flagging (0 when not measured).
  double floor = 0.0;
};

struct SweepResult {
  std::string experiment;
  std::string parameter;  // "eta" or "epsilon"
  std::vector<SweepPoint> points;
  std::optional<PowerLawFit> fit;
  /// Why no fit is reported, when `fit` is empty.
  std::string fit_note;
  std::uint64_t seed = 0;
  /// Serialized configuration echoed into the JSON summary.
  std::string config_json = "{}";

  /// Fits the unflagged points with positive error (needs >= 3).
  void refit();

  /// Header param,error_mean,error_se,replicas,flagged.
  std::string to_csv() const;
  std::string to_json() const;
  /// Log-log plot with the fitted line.
  std::string to_svg() const;
};

/// Settings shared by the replica-based sweeps. The step for each eta is the
/// largest dt <= stiffness * eta / eps that divides the horizon.
struct SweepConfig {
  double horizon = 1.0;
  double stiffness = 0.1;
  /// Error statistics are taken over recorded states, every record_stride
  /// steps.
  std::size_t record_stride = 10;
  Vector x0;
  std::optional<Vector> y0;
  ReplicaSettings run;
  bool detect_floor = true;
  double max_divergent_fraction = 0.01;
  QuadratureScheme scheme = QuadratureScheme::gauss_hermite();
};

/// Step used for a given eta: horizon / ceil(horizon * eps / (stiffness * eta)).
double sweep_dt(double horizon, double eps, double eta, double stiffness);

/// sup_t E|X^{eps,eta}(t) - X^eps(t)|^2 per eta (grid sorted decreasing).
/// Throws Error when more than max_divergent_fraction of replicas diverge.
SweepResult averaging_error_sweep(const MomentEvaluator& moments, double eps, const std::vector<double>& eta_grid,
                                  const SweepConfig& config);

using AveragedObservable = std::function<double(const Vector& x, const Vector& y)>;

/// |q-bar^eps(x) - q(x, B1(x))| per eps.
SweepResult bias_sweep(const MomentEvaluator& moments, const AveragedObservable& q, const Vector& x,
                       const std::vector<double>& eps_grid,
                       const QuadratureScheme& scheme = QuadratureScheme::gauss_hermite());

struct DeviationTestConfig {
  double horizon = 1.0;
  double stiffness = 0.1;
  Vector x0;
  std::optional<Vector> y0;
  ReplicaSettings run{5000, 0, 0};
  /// Step of the averaged path on which Z^eps is built.
  double limit_dt = 1e-3;
  /// Run every eta on the step of the smallest eta with the same replica
  /// streams, so sampling errors are shared across the grid.
  bool common_grid = true;
  /// Also estimate Cov Z^{eps,eta}(T) with a control variate: the linear
  /// process driven by each replica's own noise along the averaged path,
  /// whose covariance is known exactly. The trend is judged on this
  /// estimate, which removes most of the shared sampling error.
  bool control_variate = true;
  DeviationOptions deviation;
  double max_divergent_fraction = 0.01;
};

struct DeviationPoint {
  double eta = 0.0;
  double dt = 0.0;
  Vector mean;
  Vector mean_se;
  Matrix covariance;
  /// ||C - P||_F / ||P||_F for the plain sample covariance C.
  double relative_gap = 0.0;
  /// Same with the control-variate estimate (when enabled).
  Matrix cv_covariance;
  double cv_gap = 0.0;
  /// 3-point smoothing of cv_gap, or of relative_gap without control variate.
  double smoothed_gap = 0.0;
  std::size_t replicas = 0;
  std::size_t divergent = 0;
};

struct DeviationReport {
  double epsilon = 0.0;
  double horizon = 0.0;
  Matrix limit_covariance;
  Matrix limit_n1;
  Matrix limit_n2;
  std::vector<DeviationPoint> points;  // in eta_grid order
  bool control_variate = false;
  /// Smoothed gaps strictly decreasing from the largest to the smallest eta.
  bool gap_decreasing = false;
  std::uint64_t seed = 0;
  std::string config_json = "{}";

  std::string to_json() const;
  /// Rows: eta, dt, relative_gap, cv_gap, smoothed_gap, replicas.
  std::string to_csv() const;
};

/// Compares the empirical Cov Z^{eps,eta}(T) with Cov Z^eps(T). Throws
/// ConfigurationError for fewer than 500 replicas.
DeviationReport deviation_convergence_test(const MomentEvaluator& moments, double eps,
                                           const std::vector<double>& eta_grid, const DeviationTestConfig& config);

struct ScgdCompareConfig {
  double epsilon = 0.1;
  double eta = 1e-3;
  std::size_t num_iters = 10000;
  Vector x0;
  std::optional<Vector> y0;
  double delta = 0.1;
  std::size_t record_stride = 10;
  ReplicaSettings run{2000, 0, 0};
  SgdNoise sgd_noise = SgdNoise::limit_deviation;
};

/// Hitting statistics of one process: first recorded iteration (or fast time)
/// at which |x - minimizer| < delta, averaged over the replicas that hit.
struct HittingStats {
  double mean_time = 0.0;
  double se_time = 0.0;
  double mean_fraction_hit = 0.0;
  std::size_t hits = 0;
  /// Hitting time of the replica-mean path.
  std::optional<double> mean_path_time;
};

struct ScgdCompareReport {
  ScgdCompareConfig config;
  Vector minimizer;
  std::vector<std::size_t> iterations;
  std::vector<Vector> scgd_mean;
  std::vector<Vector> coupled_mean;
  std::vector<Vector> sgd_mean;
  /// max_k |E x_k - E X^{eps,eta}(k eta)| and the standard error at the
  /// maximizing record.
  double gap_scgd_coupled = 0.0;
  double gap_scgd_coupled_se = 0.0;
  double gap_scgd_sgd = 0.0;
  /// Hitting times in fast-time units (iteration k maps to k eta).
  HittingStats scgd_hit;
  HittingStats coupled_hit;
  HittingStats sgd_hit;
  std::uint64_t seed = 0;
  std::string config_json = "{}";

  std::string to_json() const;
  /// Rows: iteration, fast time, the three mean paths.
  std::string to_csv() const;
};

ScgdCompareReport scgd_vs_flow(const CompositionProblem& problem, const Vector& minimizer,
                               const ScgdCompareConfig& config);

struct KhasminskiiConfig {
  double horizon = 1.0;
  double stiffness = 0.1;
  Vector x0;
  std::optional<Vector> y0;
  /// Errors are evaluated every `eval_stride` EM steps.
  std::size_t eval_stride = 10;
  ReplicaSettings run{2000, 0, 0};
  /// Flag points at the round-off floor of the replayed pair.
  bool detect_floor = true;
  double max_divergent_fraction = 0.01;
};

struct KhasminskiiReport {
  SweepResult y_error;  // sup_t E|Y - Y-hat|^2
  SweepResult x_error;  // sup_t E|X - X-hat|^2
  std::vector<double> deltas;
};

KhasminskiiReport khasminskii_diagnostic(const MomentEvaluator& moments, double eps,
                                         const std::vector<double>& eta_grid, const KhasminskiiConfig& config);

/// Running per-record sums of a scalar error over replicas.
class ErrorAccumulator {
 public:
  explicit ErrorAccumulator(std::size_t records = 0) : sum_(records, 0.0), sum_sq_(records, 0.0) {}
  void add(std::size_t record, double value) {
    sum_[record] += value;
    sum_sq_[record] += value * value;
  }
  void finish_replica() { ++count_; }
  void count_divergent() { ++divergent_; }
  void merge(const ErrorAccumulator& other);
  std::size_t count() const noexcept { return count_; }
  std::size_t divergent() const noexcept { return divergent_; }
  std::size_t records() const noexcept { return sum_.size(); }
  double mean(std::size_t record) const;
  double standard_error(std::size_t record) const;
  /// Index of the record with the largest mean.
  std::size_t argmax() const;

 private:
  std::vector<double> sum_;
  std::vector<double> sum_sq_;
  std::size_t count_ = 0;
  std::size_t divergent_ = 0;
};

}  // namespace pcgf
