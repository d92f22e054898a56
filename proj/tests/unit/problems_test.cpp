#include "pcgf/errors.hpp"
#include "pcgf/problems.hpp"
#include "pcgf/quadratic_problem.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pcgf;
using pcgf::testing::mat;
using pcgf::testing::vec;

namespace {

// Objective of the quadratic family evaluated directly from the atoms.
double direct_objective(const QuadraticFamilySpec& spec, const Vector& x) {
  const Vector y = spec.a_mean * x + spec.b_mean;
  double value = 0.0;
  for (const auto& t : spec.targets) value += t.weight * 0.5 * (y - t.value).squaredNorm();
  return value;
}

}  // namespace

TEST(Problems, ObjectiveZeroCase) {
  QuadraticFamilySpec spec;
  spec.a_mean = Matrix::Identity(2, 2);
  spec.b_mean = Vector::Zero(2);
  spec.targets = {{Vector::Zero(2), 1.0}};
  const QuadraticTestProblem problem(spec);
  EXPECT_EQ(objective(problem, Vector::Zero(2)).value, 0.0);
}

TEST(Problems, ObjectiveMatchesDirectEvaluation) {
  QuadraticFamilySpec spec;
  spec.a_mean = mat({{1.0, 0.0}, {0.0, 2.0}});
  spec.b_mean = Vector::Zero(2);
  spec.targets = {{vec({1.0, 1.0}), 1.0}};
  const QuadraticTestProblem problem(spec);
  for (const Vector& x : {vec({1.0, 0.5}), vec({0.0, 0.0}), vec({-0.3, 2.0})}) {
    EXPECT_NEAR(objective(problem, x).value, direct_objective(spec, x), 1e-14);
  }
  EXPECT_NEAR(objective(problem, vec({0.0, 0.0})).value, 1.0, 1e-15);
}

TEST(Problems, ReferenceMinimizerIsMinimalOnProbeGrid) {
  const auto problem = reference_quadratic_problem();
  ASSERT_TRUE(problem->minimizer().has_value());
  const Vector xs = *problem->minimizer();
  EXPECT_NEAR(xs(0), 0.25, 1e-12);
  EXPECT_NEAR(xs(1), 1.25, 1e-12);
  const double f0 = objective(*problem, xs).value;
  for (int i = -5; i <= 5; ++i)
    for (int j = -5; j <= 5; ++j) {
      if (i == 0 && j == 0) continue;
      const Vector x = xs + vec({0.05 * i, 0.05 * j});
      EXPECT_GT(objective(*problem, x).value, f0);
    }
  EXPECT_GT(min_eigenvalue(problem->hessian()), 0.0);
}

TEST(Problems, DeterministicIndexGivesB1EqualG) {
  const QuadraticTestProblem problem(pcgf::testing::noise_free_spec());
  const Vector x = vec({0.3, -0.7});
  EXPECT_LE((drift_b1(problem, x) - problem.g(0, x)).norm(), 1e-15);
}

TEST(Problems, B2ClosedFormAndOptimality) {
  const auto problem = reference_quadratic_problem();
  const auto& spec = problem->spec();
  const Vector x = vec({0.1, 0.4});
  const Vector y = vec({1.3, -0.2});
  const Vector expected = -spec.a_mean.transpose() * (y - problem->target_mean());
  EXPECT_LE((drift_b2(*problem, x, y) - expected).norm(), 1e-14);

  const Vector xs = *problem->minimizer();
  EXPECT_LE(drift_b2(*problem, xs, drift_b1(*problem, xs)).norm(), 1e-13);
}

TEST(Problems, ChainRuleIdentity) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  for (const Vector& x : {vec({0.0, 0.0}), vec({1.0, -1.0}), vec({-0.4, 2.2})}) {
    const Vector drift = moments.gradient_flow_drift(x);
    Vector grad(2);
    for (int i = 0; i < 2; ++i) {
      const double h = 1e-5;
      Vector xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      grad(i) = (objective(*problem, xp).value - objective(*problem, xm).value) / (2 * h);
    }
    EXPECT_LE((drift + grad).norm(), 1e-8);
  }
}

TEST(Problems, SingleAtomHasZeroDiffusion) {
  const QuadraticTestProblem problem(pcgf::testing::noise_free_spec());
  const Vector x = vec({0.5, 0.5});
  EXPECT_EQ(diffusion_sigma1(problem, x).norm(), 0.0);
  EXPECT_EQ(diffusion_sigma2(problem, x, vec({1.0, 1.0})).norm(), 0.0);
}

TEST(Problems, TwoPointJacobianNoise) {
  const Matrix d = mat({{0.3, 0.0}, {0.1, 0.2}});
  QuadraticFamilySpec spec;
  spec.a_mean = Matrix::Identity(2, 2);
  spec.a_noise = {{d, 0.5}, {Matrix(-d), 0.5}};
  spec.b_mean = Vector::Zero(2);
  spec.targets = {{Vector::Zero(2), 1.0}};
  const QuadraticTestProblem problem(spec);
  const Vector x = vec({1.0, -2.0});
  const Matrix s = diffusion_sigma1(problem, x);
  const Vector dx = d * x;
  EXPECT_LE((s * s.transpose() - dx * dx.transpose()).norm(), 1e-12);
}

TEST(Problems, FactorReconstructsCovariance) {
  const auto problem = reference_quadratic_problem_with_jacobian_noise();
  const MomentEvaluator moments(*problem);
  for (const Vector& x : {vec({0.0, 0.0}), vec({1.5, -0.5})}) {
    const Matrix s1 = moments.sigma1(x);
    const Matrix a1 = moments.a1(x);
    EXPECT_LE((s1 * s1.transpose() - a1).norm(), 1e-10 * a1.norm());
    const Vector y = vec({0.9, 0.1});
    const Matrix s2 = moments.sigma2(x, y);
    const Matrix a2 = moments.a2(x, y);
    EXPECT_LE((s2 * s2.transpose() - a2).norm(), 1e-10 * a2.norm());
  }
}

TEST(Problems, OracleMatchesEnumeration) {
  // The closed-form oracle against the generic finite-atom enumeration.
  const auto problem = reference_quadratic_problem_with_jacobian_noise();
  const auto& spec = problem->spec();
  const std::size_t nb = spec.b_noise.size();
  std::vector<double> ww;
  for (const auto& a : spec.a_noise)
    for (const auto& b : spec.b_noise) ww.push_back(a.weight * b.weight);
  std::vector<double> vw;
  for (const auto& t : spec.targets) vw.push_back(t.weight);
  AtomMaps maps;
  maps.dim_x = 2;
  maps.dim_y = 2;
  maps.g = [&](AtomIndex w, const Vector& x) { return problem->g(w, x); };
  maps.grad_g = [&](AtomIndex w, const Vector& x) { return problem->grad_g(w, x); };
  maps.f = [&](AtomIndex v, const Vector& y) { return problem->f(v, y); };
  maps.grad_f = [&](AtomIndex v, const Vector& y) { return problem->grad_f(v, y); };
  ASSERT_EQ(ww.size(), spec.a_noise.size() * nb);
  const FiniteAtomProblem generic(maps, ww, vw);
  const MomentEvaluator exact(*problem), enumerated(generic);
  const Vector x = vec({0.7, -0.2});
  const Vector y = vec({0.4, 1.1});
  EXPECT_LE((exact.b1(x) - enumerated.b1(x)).norm(), 1e-13);
  EXPECT_LE((exact.b2(x, y) - enumerated.b2(x, y)).norm(), 1e-13);
  EXPECT_LE((exact.a1(x) - enumerated.a1(x)).norm(), 1e-13);
  EXPECT_LE((exact.a2(x, y) - enumerated.a2(x, y)).norm(), 1e-13);
}

TEST(Problems, OracleB1AgreesWithSampleMean) {
  const auto problem = reference_quadratic_problem_with_jacobian_noise();
  RandomStream rng(11);
  const Vector x = vec({0.6, -1.2});
  const int n = 100000;
  Vector sum = Vector::Zero(2), sum_sq = Vector::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Vector g = problem->g(problem->sample_indices(rng).w, x);
    sum += g;
    sum_sq += g.cwiseProduct(g);
  }
  const Vector mean = sum / n;
  const Vector se = ((sum_sq / n - mean.cwiseProduct(mean)) / n).cwiseSqrt();
  const Vector b1 = drift_b1(*problem, x);
  for (int i = 0; i < 2; ++i) EXPECT_LE(std::abs(mean(i) - b1(i)), 4.0 * se(i));
}

TEST(Problems, GradientsMatchFiniteDifferences) {
  auto spec = reference_quadratic_spec_with_jacobian_noise();
  spec.clip_radius = 2.0;
  spec.cubic = 0.1;
  const QuadraticTestProblem problem(spec);
  RandomStream rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const IndexPair idx = problem.sample_indices(rng);
    const Vector x = vec({3.0 * rng.normal(), 3.0 * rng.normal()});
    const Vector y = vec({rng.normal(), rng.normal()});
    EXPECT_LE(gradient_consistency_error(problem, idx.w, idx.v, x, y), 1e-5);
  }
}

TEST(Problems, ClipIsIdentityInsideRadius) {
  auto spec = reference_quadratic_spec();
  spec.clip_radius = 5.0;
  const QuadraticTestProblem problem(spec);
  const Vector inside = vec({1.0, 2.0});
  EXPECT_LE((problem.clip(inside) - inside).norm(), 1e-15);
  const Vector outside = vec({30.0, 40.0});
  EXPECT_LT(problem.clip(outside).norm(), 10.0 + 1e-12);
}

TEST(Problems, MonteCarloStandardErrorHalvesWithFourTimesBudget) {
  const auto reference = reference_quadratic_problem();
  AtomMaps maps;
  maps.dim_x = 2;
  maps.dim_y = 2;
  maps.g = [&](AtomIndex w, const Vector& x) { return reference->g(w, x); };
  maps.grad_g = [&](AtomIndex w, const Vector& x) { return reference->grad_g(w, x); };
  maps.f = [&](AtomIndex v, const Vector& y) { return reference->f(v, y); };
  maps.grad_f = [&](AtomIndex v, const Vector& y) { return reference->grad_f(v, y); };
  const SampledProblem sampled(maps, [&](RandomStream& rng) { return reference->sample_indices(rng); });
  EXPECT_THROW(MomentEvaluator{sampled}, ConfigurationError);

  // Doubling the budget should shrink the error by sqrt(2).
  RandomStream probes(8);
  double ratio_sum = 0.0;
  for (int p = 0; p < 10; ++p) {
    const Vector x = vec({probes.normal(), probes.normal()});
    const MomentEvaluator small(sampled, {20000, 100 + static_cast<std::uint64_t>(p)});
    const MomentEvaluator large(sampled, {40000, 200 + static_cast<std::uint64_t>(p)});
    ratio_sum += small.b1_estimate(x).standard_error.norm() / large.b1_estimate(x).standard_error.norm();
  }
  EXPECT_NEAR(ratio_sum / 10.0, std::sqrt(2.0), 0.2 * std::sqrt(2.0));
}

TEST(Problems, MissingBudgetIsConfigurationError) {
  const auto reference = reference_quadratic_problem();
  AtomMaps maps;
  maps.dim_x = 2;
  maps.dim_y = 2;
  maps.g = [&](AtomIndex w, const Vector& x) { return reference->g(w, x); };
  maps.grad_g = [&](AtomIndex w, const Vector& x) { return reference->grad_g(w, x); };
  maps.f = [&](AtomIndex v, const Vector& y) { return reference->f(v, y); };
  maps.grad_f = [&](AtomIndex v, const Vector& y) { return reference->grad_f(v, y); };
  const SampledProblem sampled(maps, [&](RandomStream& rng) { return reference->sample_indices(rng); });
  EXPECT_THROW(objective(sampled, Vector::Zero(2)), ConfigurationError);
  const auto est = objective(sampled, Vector::Zero(2), {50000, 1});
  EXPECT_GT(est.standard_error, 0.0);
  EXPECT_NEAR(est.value, objective(*reference, Vector::Zero(2)).value, 5.0 * est.standard_error);
}

TEST(Problems, WeightsMustSumToOne) {
  auto spec = reference_quadratic_spec();
  spec.targets[0].weight += 1e-9;
  EXPECT_THROW(QuadraticTestProblem{spec}, ConfigurationError);
}

TEST(Problems, IndefiniteHessianRejected) {
  auto spec = reference_quadratic_spec();
  spec.a_mean = mat({{1.0, 1.0}, {1.0, 1.0}});
  EXPECT_THROW(QuadraticTestProblem{spec}, ConfigurationError);
}
