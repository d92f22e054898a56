#include "pcgf/dynamics.hpp"

#include "pcgf/deviation.hpp"
#include "pcgf/errors.hpp"

#include <cmath>
#include <sstream>

namespace pcgf {

namespace {

bool finite(const Vector& v) { return std::isfinite(v.sum()) && v.allFinite(); }

[[noreturn]] void diverged(const char* who, double t, std::size_t step) {
  std::ostringstream msg;
  msg << who << ": state became non-finite at t = " << t << " (step " << step << ")";
  throw DivergenceError(msg.str(), t, step);
}

void check_stride(std::size_t stride) {
  if (stride == 0) throw ConfigurationError("record_stride must be >= 1");
}

void record(Trajectory& out, double t, const Vector& x, const Vector* y) {
  out.times.push_back(t);
  out.states_x.push_back(x);
  if (y) out.states_y.push_back(*y);
}

void check_replay(const NoiseRecord* replay, std::size_t steps, int n, int m) {
  if (!replay) return;
  if (replay->fast.size() != steps || replay->slow.size() != steps) {
    throw ConfigurationError("noise replay: record length does not match the number of steps");
  }
  if (steps > 0 && (replay->fast.front().size() != m || replay->slow.front().size() != n)) {
    throw ConfigurationError("noise replay: record dimensions do not match the problem");
  }
}

/// Shared Euler-Maruyama loop. Coefficients per step:
///   y += cy (B1 - y) + ny Sigma1 xi1,  x += cx B2 + nx Sigma2 xi2.
Trajectory coupled_em(const MomentEvaluator& moments, const SimulationConfig& config, RandomStream& rng,
                      const NoiseRecord* replay, double cy, double ny, double cx, double nx, const char* scheme,
                      const char* who) {
  const int n = moments.dim_x();
  const int m = moments.dim_y();
  const std::size_t steps = step_count(config.horizon, config.dt);
  check_replay(replay, steps, n, m);
  const std::size_t stride = config.record_stride;

  Trajectory out;
  out.meta.epsilon = config.epsilon;
  out.meta.eta = config.eta;
  out.meta.dt = config.dt;
  out.meta.seed = config.seed;
  out.meta.scheme = scheme;
  out.record_stride = stride;
  const std::size_t rows = steps / stride + 2;
  out.reserve(rows);
  out.states_y.reserve(rows);
  if (config.record_noise) {
    out.noise.emplace();
    out.noise->dt = config.dt;
    out.noise->fast.reserve(steps);
    out.noise->slow.reserve(steps);
  }

  Vector x = config.x0;
  Vector y = config.y0 ? *config.y0 : moments.b1(x);
  if (y.size() != m) throw ConfigurationError("y0 has the wrong dimension");
  record(out, 0.0, x, &y);

  ny *= config.noise_scale;
  nx *= config.noise_scale;
  const bool fast_noise = ny != 0.0;
  const bool slow_noise = nx != 0.0;
  Vector xi1 = Vector::Zero(m);
  Vector xi2 = Vector::Zero(n);
  for (std::size_t k = 0; k < steps; ++k) {
    if (replay) {
      xi1 = replay->fast[k];
      xi2 = replay->slow[k];
    } else {
      rng.normals(xi1, m);
      rng.normals(xi2, n);
    }
    if (out.noise) {
      out.noise->fast.push_back(xi1);
      out.noise->slow.push_back(xi2);
    }
    const Vector b1 = moments.b1(x);
    const Vector b2 = moments.b2(x, y);
    Vector y_next = y + cy * (b1 - y);
    if (fast_noise) y_next.noalias() += ny * (moments.sigma1(x) * xi1);
    Vector x_next = x + cx * b2;
    if (slow_noise) x_next.noalias() += nx * (moments.sigma2(x, y) * xi2);
    x = x_next;
    y = y_next;
    const double t = static_cast<double>(k + 1) * config.dt;
    if (!finite(x) || !finite(y)) diverged(who, t, k + 1);
    if ((k + 1) % stride == 0 || k + 1 == steps) record(out, t, x, &y);
  }
  return out;
}

template <typename Drift>
Trajectory rk4(const Vector& x0, double horizon, double dt, std::size_t stride, Drift&& drift, const char* who) {
  check_stride(stride);
  const std::size_t steps = step_count(horizon, dt);
  Trajectory out;
  out.meta.dt = dt;
  out.meta.scheme = "rk4";
  out.record_stride = stride;
  out.reserve(steps / stride + 2);
  Vector x = x0;
  record(out, 0.0, x, nullptr);
  for (std::size_t k = 0; k < steps; ++k) {
    const Vector k1 = drift(x);
    const Vector k2 = drift(Vector(x + 0.5 * dt * k1));
    const Vector k3 = drift(Vector(x + 0.5 * dt * k2));
    const Vector k4 = drift(Vector(x + dt * k3));
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const double t = static_cast<double>(k + 1) * dt;
    if (!finite(x)) diverged(who, t, k + 1);
    if ((k + 1) % stride == 0 || k + 1 == steps) record(out, t, x, nullptr);
  }
  return out;
}

}  // namespace

std::size_t step_count(double horizon, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigurationError("dt must be > 0");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigurationError("horizon must be > 0");
  if (dt > horizon * (1.0 + 1e-12)) throw ConfigurationError("dt must be <= horizon");
  const double ratio = horizon / dt;
  const double steps = std::round(ratio);
  if (std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio)) {
    throw ConfigurationError("horizon must be an integer multiple of dt");
  }
  return static_cast<std::size_t>(steps);
}

void validate_fast_timescale(const SimulationConfig& c, int dim_x) {
  if (!(c.epsilon > 0.0)) throw ConfigurationError("epsilon must be > 0");
  if (!(c.eta > 0.0)) throw ConfigurationError("eta must be > 0");
  check_stride(c.record_stride);
  if (c.x0.size() != dim_x) throw ConfigurationError("x0 has the wrong dimension");
  step_count(c.horizon, c.dt);
  if (c.dt * c.epsilon / c.eta > 0.1 * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "dt * epsilon / eta must be <= 0.1 (got " << c.dt * c.epsilon / c.eta << ")";
    throw ConfigurationError(msg.str());
  }
}

void validate_original_timescale(const SimulationConfig& c, int dim_x) {
  if (!(c.epsilon >= 0.0)) throw ConfigurationError("epsilon must be >= 0");
  if (!(c.eta >= 0.0)) throw ConfigurationError("eta must be >= 0");
  check_stride(c.record_stride);
  if (c.x0.size() != dim_x) throw ConfigurationError("x0 has the wrong dimension");
  step_count(c.horizon, c.dt);
  if (c.dt * c.epsilon > 0.1 * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "dt * epsilon must be <= 0.1 (got " << c.dt * c.epsilon << ")";
    throw ConfigurationError(msg.str());
  }
}

Trajectory simulate_coupled_fast_timescale(const MomentEvaluator& moments, const SimulationConfig& config,
                                           RandomStream& rng, const NoiseRecord* replay) {
  validate_fast_timescale(config, moments.dim_x());
  const double sdt = std::sqrt(config.dt);
  const double cy = config.epsilon / config.eta * config.dt;
  const double ny = config.epsilon / std::sqrt(config.eta) * sdt;
  const double cx = config.dt;
  const double nx = std::sqrt(config.eta) * sdt;
  return coupled_em(moments, config, rng, replay, cy, ny, cx, nx, "euler_maruyama_fast",
                    "simulate_coupled_fast_timescale");
}

Trajectory simulate_coupled_original_timescale(const MomentEvaluator& moments, const SimulationConfig& config,
                                               RandomStream& rng, const NoiseRecord* replay) {
  validate_original_timescale(config, moments.dim_x());
  const double sdt = std::sqrt(config.dt);
  const double cy = config.epsilon * config.dt;
  const double ny = config.epsilon * sdt;
  const double cx = config.eta * config.dt;
  const double nx = config.eta * sdt;
  return coupled_em(moments, config, rng, replay, cy, ny, cx, nx, "euler_maruyama_original",
                    "simulate_coupled_original_timescale");
}

Trajectory integrate_averaged_ode(const MomentEvaluator& moments, const Vector& x0, double eps, double horizon,
                                  double dt, const QuadratureScheme& scheme, std::size_t record_stride) {
  if (!(eps >= 0.0)) throw ConfigurationError("epsilon must be >= 0");
  if (x0.size() != moments.dim_x()) throw ConfigurationError("x0 has the wrong dimension");
  const StandardGaussianRule rule(scheme, moments.dim_y());
  Trajectory out = rk4(
      x0, horizon, dt, record_stride, [&](const Vector& x) { return averaged_drift(moments, x, eps, rule); },
      "integrate_averaged_ode");
  out.meta.epsilon = eps;
  return out;
}

Trajectory integrate_gradient_flow(const MomentEvaluator& moments, const Vector& x0, double horizon, double dt,
                                   std::size_t record_stride) {
  if (x0.size() != moments.dim_x()) throw ConfigurationError("x0 has the wrong dimension");
  return rk4(
      x0, horizon, dt, record_stride, [&](const Vector& x) { return moments.gradient_flow_drift(x); },
      "integrate_gradient_flow");
}

Trajectory simulate_sgd_diffusion(const MomentEvaluator& moments, const Vector& x0, double eps, double eta,
                                  double horizon, double dt, RandomStream& rng, SgdNoise noise,
                                  std::size_t record_stride, const LimitDeviationPlan* plan,
                                  std::function<Matrix(const Vector&)> factor) {
  check_stride(record_stride);
  if (!(eta >= 0.0)) throw ConfigurationError("eta must be >= 0");
  if (!(eps >= 0.0)) throw ConfigurationError("epsilon must be >= 0");
  if (x0.size() != moments.dim_x()) throw ConfigurationError("x0 has the wrong dimension");
  const int n = moments.dim_x();
  const std::size_t steps = step_count(horizon, dt);
  const double sqrt_eta = std::sqrt(eta);

  std::optional<LimitDeviationPlan> own_plan;
  if (noise == SgdNoise::limit_deviation && eta > 0.0) {
    if (!plan) {
      if (!(eps > 0.0)) throw ConfigurationError("limit_deviation noise needs epsilon > 0");
      const Trajectory averaged = integrate_averaged_ode(moments, x0, eps, horizon, dt);
      own_plan = build_limit_deviation_plan(moments, averaged, eps, DeviationOptions{});
      plan = &*own_plan;
    }
    if (plan->steps() != steps) throw AlignmentError("limit deviation plan grid does not match dt and horizon");
  }
  std::function<Matrix(const Vector&)> local_factor = factor;
  if (noise == SgdNoise::constant_factor && !local_factor && eta > 0.0) {
    if (!(eps > 0.0)) throw ConfigurationError("constant_factor noise without a factor needs epsilon > 0");
    local_factor = [&moments, eps](const Vector& x) {
      const DeviationRates r = deviation_rates(moments, x, eps, DeviationOptions{});
      return psd_factor(Matrix(r.n1 + r.n2));
    };
  }

  Trajectory out;
  out.meta.epsilon = eps;
  out.meta.eta = eta;
  out.meta.dt = dt;
  out.meta.scheme = noise == SgdNoise::limit_deviation ? "sgd_limit_deviation" : "sgd_constant_factor";
  out.record_stride = record_stride;
  out.reserve(steps / record_stride + 2);
  Vector x = x0;
  Vector z = Vector::Zero(n);
  Vector xi(n);
  record(out, 0.0, x, nullptr);
  const double sdt = std::sqrt(dt);
  for (std::size_t k = 0; k < steps; ++k) {
    Vector dx = dt * moments.gradient_flow_drift(x);
    if (eta > 0.0) {
      rng.normals(xi, n);
      if (noise == SgdNoise::limit_deviation) {
        const Vector dz = dt * (plan->jacobians[k] * z) + plan->increment_factors[k] * xi;
        z += dz;
        dx += sqrt_eta * dz;
      } else {
        dx.noalias() += (sqrt_eta * sdt) * (local_factor(x) * xi);
      }
    }
    x += dx;
    const double t = static_cast<double>(k + 1) * dt;
    if (!finite(x)) diverged("simulate_sgd_diffusion", t, k + 1);
    if ((k + 1) % record_stride == 0 || k + 1 == steps) record(out, t, x, nullptr);
  }
  return out;
}

ScgdPath run_scgd(const CompositionProblem& problem, double eps, double eta, std::size_t num_iters, const Vector& x0,
                  const Vector& y0, RandomStream& rng, std::size_t record_stride) {
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigurationError("SCGD needs 0 < epsilon <= 1");
  if (!(eta >= 0.0)) throw ConfigurationError("SCGD needs eta >= 0");
  check_stride(record_stride);
  if (x0.size() != problem.dim_x() || y0.size() != problem.dim_y()) {
    throw ConfigurationError("SCGD: x0 / y0 have the wrong dimension");
  }
  ScgdPath path;
  const std::size_t rows = num_iters / record_stride + 2;
  path.iterations.reserve(rows);
  path.x.reserve(rows);
  path.y.reserve(rows);
  Vector x = x0;
  Vector y = y0;
  path.iterations.push_back(0);
  path.x.push_back(x);
  path.y.push_back(y);
  for (std::size_t k = 0; k < num_iters; ++k) {
    const IndexPair idx = problem.sample_indices(rng);
    if (eps == 1.0) {
      y = problem.g(idx.w, x);
    } else {
      y = (1.0 - eps) * y + eps * problem.g(idx.w, x);
    }
    if (eta != 0.0) x -= eta * (problem.grad_g(idx.w, x) * problem.grad_f(idx.v, y));
    if (!finite(x) || !finite(y)) {
      std::ostringstream msg;
      msg << "run_scgd: iterate became non-finite at iteration " << k + 1;
      throw DivergenceError(msg.str(), static_cast<double>(k + 1), k + 1);
    }
    if ((k + 1) % record_stride == 0 || k + 1 == num_iters) {
      path.iterations.push_back(k + 1);
      path.x.push_back(x);
      path.y.push_back(y);
    }
  }
  return path;
}

double delta_default(double eta) {
  if (!(eta > 0.0 && eta < 1.0)) throw DomainError("delta_default needs 0 < eta < 1");
  return eta * std::pow(std::log(1.0 / eta), 0.25);
}

std::size_t khasminskii_block_steps(double delta, double dt, std::size_t record_stride) {
  if (!(delta > 0.0)) throw ConfigurationError("Khasminskii block length must be > 0");
  if (!(dt > 0.0)) throw ConfigurationError("dt must be > 0");
  check_stride(record_stride);
  const double unit = dt * static_cast<double>(record_stride);
  const double blocks = std::max(1.0, std::round(delta / unit));
  return static_cast<std::size_t>(blocks) * record_stride;
}

Trajectory build_khasminskii_pair(const MomentEvaluator& moments, const Trajectory& coupled, double delta) {
  if (!coupled.noise) throw ConfigurationError("Khasminskii pair needs a trajectory recorded with noise increments");
  if (!coupled.has_y()) throw ConfigurationError("Khasminskii pair needs the fast-variable path");
  const auto& noise = *coupled.noise;
  const double dt = coupled.meta.dt;
  const double eps = coupled.meta.epsilon;
  const double eta = coupled.meta.eta;
  if (!(dt > 0.0 && eps > 0.0 && eta > 0.0)) throw ConfigurationError("Khasminskii pair: invalid trajectory meta");
  const std::size_t stride = coupled.record_stride;
  const std::size_t steps = noise.fast.size();
  const double horizon = static_cast<double>(steps) * dt;
  // A block at least as long as the path is a single block.
  const std::size_t block = delta >= horizon * (1.0 - 1e-12) ? steps + stride
                                                              : khasminskii_block_steps(delta, dt, stride);

  const double sdt = std::sqrt(dt);
  const double cy = eps / eta * dt;
  const double ny = eps / std::sqrt(eta) * sdt;
  const double nx = std::sqrt(eta) * sdt;

  Trajectory out;
  out.meta = coupled.meta;
  out.meta.scheme = "khasminskii_pair";
  out.meta.extra["block_steps"] = std::to_string(block);
  out.record_stride = stride;
  out.reserve(coupled.size());
  out.states_y.reserve(coupled.size());

  Vector x_hat = coupled.states_x.front();
  Vector y_hat = coupled.states_y.front();
  Vector x_frozen = x_hat;
  Vector b1 = moments.b1(x_frozen);
  Matrix s1 = moments.sigma1(x_frozen);
  record(out, 0.0, x_hat, &y_hat);
  for (std::size_t k = 0; k < steps; ++k) {
    if (k % block == 0 && k > 0) {
      const std::size_t row = k / stride;
      x_frozen = coupled.states_x[row];
      y_hat = coupled.states_y[row];
      b1 = moments.b1(x_frozen);
      s1 = moments.sigma1(x_frozen);
    }
    const Vector b2 = moments.b2(x_frozen, y_hat);
    Vector x_next = x_hat + dt * b2;
    x_next.noalias() += nx * (moments.sigma2(x_frozen, y_hat) * noise.slow[k]);
    Vector y_next = y_hat + cy * (b1 - y_hat);
    y_next.noalias() += ny * (s1 * noise.fast[k]);
    x_hat = x_next;
    y_hat = y_next;
    const double t = static_cast<double>(k + 1) * dt;
    if (!finite(x_hat) || !finite(y_hat)) diverged("build_khasminskii_pair", t, k + 1);
    if ((k + 1) % stride == 0 || k + 1 == steps) record(out, t, x_hat, &y_hat);
  }
  return out;
}

std::string to_string(SgdNoise noise) {
  return noise == SgdNoise::limit_deviation ? "limit_deviation" : "constant_factor";
}

}  // namespace pcgf
