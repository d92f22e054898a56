#pragma once

#include "pcgf/gaussian.hpp"
#include "pcgf/problems.hpp"
#include "pcgf/random.hpp"
#include "pcgf/trajectory.hpp"

#include <cstdint>
#include <functional>
#include <optional>

namespace pcgf {

struct LimitDeviationPlan;
struct DeviationOptions;

/// Settings of a coupled simulation. Units follow the simulator: fast-time
/// units for simulate_coupled_fast_timescale, original units for
/// simulate_coupled_original_timescale.
struct SimulationConfig {
  double epsilon = 0.0;
  double eta = 0.0;
  double horizon = 1.0;
  double dt = 0.0;
  std::size_t replicas = 1;
  std::uint64_t seed = 0;
  std::size_t record_stride = 1;
  Vector x0;
  /// Defaults to B1(x0), the centre of the fast variable's invariant law.
  std::optional<Vector> y0;
  bool record_noise = false;
  /// Multiplies both noise factors; 0 gives the noise-free system.
  double noise_scale = 1.0;
};

/// Number of steps of size dt in [0, horizon]; throws ConfigurationError
/// unless horizon is an integer multiple of dt (relative slack 1e-9).
std::size_t step_count(double horizon, double dt);

/// Throws ConfigurationError naming the violated constraint. The fast-time
/// check enforces dt * epsilon / eta <= 0.1.
void validate_fast_timescale(const SimulationConfig& config, int dim_x);
void validate_original_timescale(const SimulationConfig& config, int dim_x);

/// Euler-Maruyama for
///     dY = (eps/eta)(B1(X) - Y) dt + (eps/sqrt(eta)) Sigma1(X) dW1
///     dX = B2(X, Y) dt + sqrt(eta) Sigma2(X, Y) dW2
/// on [0, horizon]. States are recorded every `record_stride` steps (and at
/// the final step). With `replay` the recorded standard normals are used
/// instead of `rng`; replay.dt may differ from config.dt. Throws
/// DivergenceError at the first non-finite state.
Trajectory simulate_coupled_fast_timescale(const MomentEvaluator& moments, const SimulationConfig& config,
                                           RandomStream& rng, const NoiseRecord* replay = nullptr);

/// Euler-Maruyama for the original-scale system
///     dy = eps (B1(x) - y) dt + eps Sigma1(x) dW1
///     dx = eta B2(x, y) dt + eta Sigma2(x, y) dW2.
/// x(t) on [0, T/eta] equals X on [0, T] under t -> eta t.
Trajectory simulate_coupled_original_timescale(const MomentEvaluator& moments, const SimulationConfig& config,
                                               RandomStream& rng, const NoiseRecord* replay = nullptr);

/// Classical RK4 for dX = B2-bar^eps(X) dt. Uses the closed-form averaged
/// drift when available, `scheme` quadrature otherwise.
Trajectory integrate_averaged_ode(const MomentEvaluator& moments, const Vector& x0, double eps, double horizon,
                                  double dt, const QuadratureScheme& scheme = QuadratureScheme::gauss_hermite(),
                                  std::size_t record_stride = 1);

/// RK4 for dX = B2(X, B1(X)) dt, the gradient flow of the composite
/// objective.
Trajectory integrate_gradient_flow(const MomentEvaluator& moments, const Vector& x0, double horizon, double dt,
                                   std::size_t record_stride = 1);

enum class SgdNoise { limit_deviation, constant_factor };

/// Euler-Maruyama for dX = B2(X, B1(X)) dt + sqrt(eta) dZ.
///
/// limit_deviation: dZ = M(Xbar_t) Z dt + dN, the limit deviation process
/// along the averaged path (taken from `plan`, or built with `options` on the
/// same grid when `plan` is null).
/// constant_factor: dZ = S(X) dW with S = `factor` if given, otherwise the
/// factor of the local N1 + N2 covariance rate at X.
Trajectory simulate_sgd_diffusion(const MomentEvaluator& moments, const Vector& x0, double eps, double eta,
                                  double horizon, double dt, RandomStream& rng, SgdNoise noise,
                                  std::size_t record_stride = 1, const LimitDeviationPlan* plan = nullptr,
                                  std::function<Matrix(const Vector&)> factor = {});

struct ScgdPath {
  std::vector<std::size_t> iterations;
  std::vector<Vector> x;
  std::vector<Vector> y;
};

/// SCGD:
///     y_{k+1} = (1 - eps) y_k + eps g_{w_k}(x_k)
///     x_{k+1} = x_k - eta grad~ g_{w_k}(x_k) grad f_{v_k}(y_{k+1})
/// with fresh independent (w_k, v_k). Iterates are recorded every
/// `record_stride` iterations and at the last one.
ScgdPath run_scgd(const CompositionProblem& problem, double eps, double eta, std::size_t num_iters, const Vector& x0,
                  const Vector& y0, RandomStream& rng, std::size_t record_stride = 1);

/// eta (ln 1/eta)^{1/4}, for 0 < eta < 1.
double delta_default(double eta);

/// Block length actually used: delta rounded to the nearest multiple of
/// dt * record_stride (at least one). Both auxiliary processes restart or
/// freeze at block boundaries, which must be recorded states.
std::size_t khasminskii_block_steps(double delta, double dt, std::size_t record_stride);

/// The auxiliary pair on the recorded grid of `coupled`: states_y holds Y-hat
/// (restarted at Y(k Delta) with X frozen at X(k Delta)), states_x holds
/// X-hat. Both replay the trajectory's noise record. Throws
/// ConfigurationError when the trajectory has no noise record.
Trajectory build_khasminskii_pair(const MomentEvaluator& moments, const Trajectory& coupled, double delta);

std::string to_string(SgdNoise noise);

}  // namespace pcgf
