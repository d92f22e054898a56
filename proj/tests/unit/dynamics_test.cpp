#include "pcgf/deviation.hpp"
#include "pcgf/dynamics.hpp"
#include "pcgf/errors.hpp"
#include "pcgf/quadratic_problem.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pcgf;
using pcgf::testing::vec;

namespace {

SimulationConfig fast_config(double eps, double eta, double horizon, double dt, std::size_t stride = 1) {
  SimulationConfig c;
  c.epsilon = eps;
  c.eta = eta;
  c.horizon = horizon;
  c.dt = dt;
  c.record_stride = stride;
  c.x0 = vec({0.0, 0.0});
  return c;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(StepCount, RequiresIntegerMultiple) {
  EXPECT_EQ(step_count(1.0, 0.1), 10u);
  EXPECT_EQ(step_count(1.0, 4e-4), 2500u);
  EXPECT_THROW(step_count(1.0, 0.3), ConfigurationError);
  EXPECT_THROW(step_count(1.0, 0.0), ConfigurationError);
}

TEST(Validation, NamesTheViolatedConstraint) {
  const auto problem = reference_quadratic_problem();
  EXPECT_EQ(message_of([&] { validate_fast_timescale(fast_config(-1.0, 0.1, 1.0, 0.01), 2); }),
            "epsilon must be > 0");
  EXPECT_EQ(message_of([&] { validate_fast_timescale(fast_config(0.5, 0.0, 1.0, 0.01), 2); }), "eta must be > 0");
  EXPECT_NE(message_of([&] { validate_fast_timescale(fast_config(0.5, 0.01, 1.0, 0.01), 2); })
                .find("dt * epsilon / eta must be <= 0.1"),
            std::string::npos);
  EXPECT_NO_THROW(validate_fast_timescale(fast_config(0.5, 0.01, 1.0, 0.002), 2));
  SimulationConfig orig = fast_config(0.5, 0.01, 100.0, 0.5);
  EXPECT_NE(message_of([&] { validate_original_timescale(orig, 2); }).find("dt * epsilon must be <= 0.1"),
            std::string::npos);
}

TEST(Coupled, RecordsExpectedRows) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  RandomStream rng(1);
  const Trajectory t = simulate_coupled_fast_timescale(moments, fast_config(0.5, 0.01, 0.1, 0.002, 5), rng);
  EXPECT_EQ(t.size(), 0.1 / 0.002 / 5 + 1);
  EXPECT_NEAR(t.times.back(), 0.1, 1e-15);
  EXPECT_EQ(t.meta.dt, 0.002);
  // Stride that does not divide the step count: the last step is still kept.
  RandomStream rng2(1);
  const Trajectory u = simulate_coupled_fast_timescale(moments, fast_config(0.5, 0.01, 0.1, 0.002, 7), rng2);
  EXPECT_EQ(u.size(), 50 / 7 + 2);
  EXPECT_NEAR(u.times.back(), 0.1, 1e-15);
  EXPECT_NO_THROW(u.validate(true));
}

TEST(Coupled, DefaultY0IsB1) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  RandomStream rng(1);
  const Trajectory t = simulate_coupled_fast_timescale(moments, fast_config(0.5, 0.01, 0.01, 0.002), rng);
  EXPECT_EQ(t.states_y.front(), moments.b1(vec({0.0, 0.0})));
}

TEST(Coupled, OriginalTimescaleReplaysFastPath) {
  const auto problem = reference_quadratic_problem_with_jacobian_noise();
  const MomentEvaluator moments(*problem);
  const double eps = 0.4, eta = 0.02;
  SimulationConfig fast = fast_config(eps, eta, 0.5, 0.004, 5);
  fast.record_noise = true;
  RandomStream rng(3);
  const Trajectory a = simulate_coupled_fast_timescale(moments, fast, rng);

  SimulationConfig orig = fast;
  orig.horizon = fast.horizon / eta;
  orig.dt = fast.dt / eta;
  orig.record_noise = false;
  RandomStream unused(0);
  const Trajectory b = simulate_coupled_original_timescale(moments, orig, unused, &*a.noise);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(b.times[i] * eta, a.times[i], 1e-12);
    EXPECT_LE((a.states_x[i] - b.states_x[i]).norm(), 1e-12);
    EXPECT_LE((a.states_y[i] - b.states_y[i]).norm(), 1e-12);
  }
}

TEST(Coupled, ZeroNoiseScaleIsDeterministic) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  SimulationConfig c = fast_config(0.5, 0.01, 0.2, 0.002);
  c.noise_scale = 0.0;
  RandomStream r1(1), r2(99);
  const Trajectory a = simulate_coupled_fast_timescale(moments, c, r1);
  const Trajectory b = simulate_coupled_fast_timescale(moments, c, r2);
  EXPECT_EQ(a.states_x.back(), b.states_x.back());
}

TEST(Coupled, NoiseFreeSlowPathTracksAveragedOde) {
  // With no noise the fast variable sits on B1 up to an O(eta/eps) lag.
  const QuadraticTestProblem problem(pcgf::testing::noise_free_spec());
  const MomentEvaluator moments(problem);
  RandomStream rng(0);
  const Trajectory coupled = simulate_coupled_fast_timescale(moments, fast_config(0.5, 1e-3, 1.0, 2e-4, 50), rng);
  const Trajectory avg = integrate_averaged_ode(moments, vec({0.0, 0.0}), 0.5, 1.0, 2e-4, {}, 50);
  ASSERT_EQ(coupled.size(), avg.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < avg.size(); ++i) worst = std::max(worst, (coupled.states_x[i] - avg.states_x[i]).norm());
  EXPECT_LT(worst, 1e-2);
}

TEST(Coupled, DivergenceIsReported) {
  auto spec = reference_quadratic_spec();
  spec.cubic = 5.0;
  const QuadraticTestProblem problem(spec);
  const MomentEvaluator moments(problem);
  SimulationConfig c = fast_config(0.5, 0.5, 20.0, 0.1);
  c.x0 = vec({-50.0, -50.0});
  RandomStream rng(1);
  EXPECT_THROW(simulate_coupled_fast_timescale(moments, c, rng), DivergenceError);
}

TEST(AveragedOde, ConvergesToMinimizerAndMatchesGradientFlow) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const Trajectory avg = integrate_averaged_ode(moments, vec({0.0, 0.0}), 0.5, 20.0, 0.01);
  EXPECT_LE((avg.states_x.back() - *problem->minimizer()).norm(), 1e-6);
  // B2 is linear in y, so averaging does not change the drift.
  const Trajectory flow = integrate_gradient_flow(moments, vec({0.0, 0.0}), 20.0, 0.01);
  for (std::size_t i = 0; i < avg.size(); i += 100) EXPECT_LE((avg.states_x[i] - flow.states_x[i]).norm(), 1e-12);
}

TEST(AveragedOde, Rk4IsFourthOrder) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const Vector x0 = vec({2.0, -1.0});
  const Trajectory fine = integrate_averaged_ode(moments, x0, 0.5, 1.0, 1e-3);
  const Trajectory a = integrate_averaged_ode(moments, x0, 0.5, 1.0, 0.1);
  const Trajectory b = integrate_averaged_ode(moments, x0, 0.5, 1.0, 0.05);
  const double ea = (a.states_x.back() - fine.states_x.back()).norm();
  const double eb = (b.states_x.back() - fine.states_x.back()).norm();
  EXPECT_NEAR(std::log2(ea / eb), 4.0, 0.3);
}

TEST(Scgd, DeterministicSingleAtomMatchesEulerStepUpToEtaSquared) {
  const QuadraticTestProblem problem(pcgf::testing::noise_free_spec());
  const MomentEvaluator moments(problem);
  const double eps = 0.1, eta = 1e-3;
  RandomStream rng(0);
  const Vector x0 = vec({0.0, 0.0});
  const ScgdPath path = run_scgd(problem, eps, eta, 200, x0, moments.b1(x0), rng, 1);
  ASSERT_EQ(path.x.size(), 201u);
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < path.x.size(); ++k) {
    const Vector& x = path.x[k];
    const Vector& y = path.y[k];
    const Vector y_em = y + eps * (moments.b1(x) - y);
    const Vector x_em = x + eta * moments.b2(x, y);
    worst = std::max(worst, (path.x[k + 1] - x_em).norm() + (path.y[k + 1] - y_em).norm());
  }
  EXPECT_LE(worst, 10.0 * eta * eta);
}

TEST(Scgd, RejectsBadStepSizes) {
  const auto problem = reference_quadratic_problem();
  RandomStream rng(0);
  const Vector z = vec({0.0, 0.0});
  EXPECT_THROW(run_scgd(*problem, 1.5, 1e-3, 10, z, z, rng), ConfigurationError);
  EXPECT_THROW(run_scgd(*problem, 0.0, 1e-3, 10, z, z, rng), ConfigurationError);
}

TEST(Scgd, ConvergesNearMinimizer) {
  const auto problem = reference_quadratic_problem();
  RandomStream rng(4);
  const Vector z = vec({0.0, 0.0});
  const ScgdPath path = run_scgd(*problem, 0.1, 1e-2, 5000, z, z, rng, 100);
  EXPECT_EQ(path.iterations.back(), 5000u);
  EXPECT_LT((path.x.back() - *problem->minimizer()).norm(), 0.2);
}

TEST(SgdDiffusion, ConstantFactorWithoutNoiseIsGradientFlowEuler) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  RandomStream rng(1);
  const Vector x0 = vec({1.0, 1.0});
  const Trajectory t = simulate_sgd_diffusion(moments, x0, 0.5, 0.0, 1.0, 0.01, rng, SgdNoise::constant_factor, 1,
                                              nullptr, [](const Vector&) { return Matrix(Matrix::Zero(2, 2)); });
  Vector x = x0;
  for (int k = 0; k < 100; ++k) x += 0.01 * moments.gradient_flow_drift(x);
  EXPECT_LE((t.states_x.back() - x).norm(), 1e-13);
}

TEST(SgdDiffusion, LocalFactorNoiseHasLimitCovariance) {
  // For linear drift X - Xbar = sqrt(eta) Z with dZ = M Z dt + S dW, and the
  // rates are constant on this family, so Cov Z(1) is the limit covariance.
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const double eps = 0.25, eta = 1e-2;
  const Vector x0 = vec({0.0, 0.0});
  const Trajectory avg = integrate_averaged_ode(moments, x0, eps, 1.0, 0.01);
  const Matrix p = limit_covariance(build_limit_deviation_plan(moments, avg, eps)).back();
  const int n = 4000;
  Vector sum = Vector::Zero(2);
  Matrix sum_sq = Matrix::Zero(2, 2);
  for (int r = 0; r < n; ++r) {
    RandomStream rng(derive_seed(5, 0, r));
    const Trajectory t =
        simulate_sgd_diffusion(moments, x0, eps, eta, 1.0, 0.01, rng, SgdNoise::constant_factor, 100);
    const Vector z = (t.states_x.back() - avg.states_x.back()) / std::sqrt(eta);
    sum += z;
    sum_sq += z * z.transpose();
  }
  const Vector mean = sum / n;
  const Matrix cov = sum_sq / n - mean * mean.transpose();
  EXPECT_LT((cov - p).norm() / p.norm(), 0.1);
}

TEST(SgdDiffusion, LimitDeviationPlanMustMatchGrid) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const Vector x0 = vec({0.0, 0.0});
  const Trajectory avg = integrate_averaged_ode(moments, x0, 0.25, 1.0, 0.01);
  const LimitDeviationPlan plan = build_limit_deviation_plan(moments, avg, 0.25);
  RandomStream rng(1);
  EXPECT_THROW(simulate_sgd_diffusion(moments, x0, 0.25, 1e-2, 1.0, 0.02, rng, SgdNoise::limit_deviation, 1, &plan),
               AlignmentError);
  const Trajectory t = simulate_sgd_diffusion(moments, x0, 0.25, 1e-2, 1.0, 0.01, rng, SgdNoise::limit_deviation, 10,
                                              &plan);
  EXPECT_EQ(t.size(), 11u);
}

TEST(Khasminskii, DefaultDeltaAndBlocks) {
  EXPECT_NEAR(delta_default(0.01), 0.01 * std::pow(std::log(100.0), 0.25), 1e-15);
  EXPECT_THROW(delta_default(1.0), DomainError);
  EXPECT_EQ(khasminskii_block_steps(0.014, 0.002, 1), 7u);
  EXPECT_EQ(khasminskii_block_steps(0.014, 0.002, 5), 5u);
  EXPECT_EQ(khasminskii_block_steps(1e-9, 0.002, 1), 1u);
}

TEST(Khasminskii, PairNeedsNoiseRecord) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  RandomStream rng(1);
  const Trajectory t = simulate_coupled_fast_timescale(moments, fast_config(0.5, 0.01, 0.1, 0.002), rng);
  EXPECT_THROW(build_khasminskii_pair(moments, t, 0.01), ConfigurationError);
}

TEST(Khasminskii, PairRestartsAtBlockBoundaries) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  SimulationConfig c = fast_config(0.5, 0.01, 0.2, 0.002);
  c.record_noise = true;
  RandomStream rng(2);
  const Trajectory t = simulate_coupled_fast_timescale(moments, c, rng);
  const Trajectory pair = build_khasminskii_pair(moments, t, delta_default(0.01));
  const std::size_t block = std::stoul(pair.meta.extra.at("block_steps"));
  EXPECT_EQ(block, khasminskii_block_steps(delta_default(0.01), 0.002, 1));
  ASSERT_EQ(pair.size(), t.size());
  // One step after a restart both Y and Y-hat took the same step from
  // the same point with a drift whose x-argument differs only slightly.
  EXPECT_EQ(pair.states_y[0], t.states_y[0]);
  EXPECT_EQ(pair.states_x[0], t.states_x[0]);
  double gap = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) gap = std::max(gap, (pair.states_y[i] - t.states_y[i]).norm());
  EXPECT_GT(gap, 0.0);
  EXPECT_LT(gap, 0.05);
}
