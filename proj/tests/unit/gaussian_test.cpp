#include "pcgf/errors.hpp"
#include "pcgf/gaussian.hpp"
#include "pcgf/quadratic_problem.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace pcgf;
using pcgf::testing::mat;
using pcgf::testing::vec;

TEST(GaussHermite, WeightsAndMoments) {
  std::vector<double> nodes, weights;
  gauss_hermite_rule(10, nodes, weights);
  ASSERT_EQ(nodes.size(), 10u);
  double w = 0, m2 = 0, m4 = 0, m6 = 0, m1 = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    w += weights[i];
    m1 += weights[i] * nodes[i];
    m2 += weights[i] * std::pow(nodes[i], 2);
    m4 += weights[i] * std::pow(nodes[i], 4);
    m6 += weights[i] * std::pow(nodes[i], 6);
  }
  EXPECT_NEAR(w, 1.0, 1e-14);
  EXPECT_NEAR(m1, 0.0, 1e-14);
  EXPECT_NEAR(m2, 1.0, 1e-13);
  EXPECT_NEAR(m4, 3.0, 1e-12);
  EXPECT_NEAR(m6, 15.0, 1e-11);
}

TEST(GaussHermite, TensorRuleIntegratesQuadraticForm) {
  GaussianMeasure mu{vec({1.0, -2.0}), mat({{2.0, 0.3}, {0.3, 0.5}})};
  const StandardGaussianRule rule(QuadratureScheme::gauss_hermite(6), 2);
  const Matrix q = mat({{1.0, 0.2}, {0.2, 3.0}});
  const auto est = integrate_gaussian(mu, rule, [&](const Vector& y) { return y.dot(q * y); });
  const double expected = (q * mu.covariance).trace() + mu.mean.dot(q * mu.mean);
  EXPECT_NEAR(est.value, expected, 1e-12);
  EXPECT_EQ(est.standard_error, 0.0);
}

TEST(GaussHermite, NodeCapSuggestsMonteCarlo) {
  QuadratureScheme s = QuadratureScheme::gauss_hermite(20);
  try {
    StandardGaussianRule rule(s, 4);
    FAIL();
  } catch (const ConfigurationError& e) {
    EXPECT_NE(std::string(e.what()).find("monte_carlo"), std::string::npos);
  }
}

TEST(MonteCarlo, ReportsStandardErrorAndIsSeeded) {
  GaussianMeasure mu{vec({0.0}), mat({{1.0}})};
  const StandardGaussianRule a(QuadratureScheme::monte_carlo(20000, 4), 1);
  const StandardGaussianRule b(QuadratureScheme::monte_carlo(20000, 4), 1);
  const auto ea = integrate_gaussian(mu, a, [](const Vector& y) { return std::abs(y(0)); });
  const auto eb = integrate_gaussian(mu, b, [](const Vector& y) { return std::abs(y(0)); });
  EXPECT_EQ(ea.value, eb.value);
  EXPECT_GT(ea.standard_error, 0.0);
  EXPECT_NEAR(ea.value, std::sqrt(2.0 / std::numbers::pi), 4.0 * ea.standard_error);
}

TEST(MonteCarlo, VectorValuedIntegrand) {
  GaussianMeasure mu{vec({1.0, 2.0}), mat({{1.0, 0.0}, {0.0, 4.0}})};
  const StandardGaussianRule rule(QuadratureScheme::monte_carlo(50000, 1), 2);
  const auto est = integrate_gaussian(mu, rule, [](const Vector& y) { return Vector(y); });
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(est.value(i), mu.mean(i), 4.0 * est.standard_error(i));
}

TEST(Gaussian, PointMassWhenCovarianceIsZero) {
  GaussianMeasure mu{vec({0.5}), Matrix::Zero(1, 1)};
  const StandardGaussianRule rule(QuadratureScheme::gauss_hermite(5), 1);
  int calls = 0;
  const auto est = integrate_gaussian(mu, rule, [&](const Vector& y) {
    ++calls;
    return y(0) * y(0);
  });
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(est.value, 0.25);
}

TEST(InvariantMeasure, MeanAndCovariance) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const Vector x = vec({0.2, 0.3});
  const GaussianMeasure mu = invariant_measure(moments, x, 0.1);
  EXPECT_LE((mu.mean - moments.b1(x)).norm(), 1e-15);
  EXPECT_LE((mu.covariance - 0.05 * moments.a1(x)).norm(), 1e-15);
  EXPECT_NO_THROW(mu.validate());
  const GaussianMeasure point = invariant_measure(moments, x, 0.0);
  EXPECT_EQ(point.covariance.norm(), 0.0);
}

TEST(OuTransition, ConvergesToInvariantMeasure) {
  const auto problem = reference_quadratic_problem_with_jacobian_noise();
  const MomentEvaluator moments(*problem);
  const Vector x = vec({1.0, -1.0});
  const Vector y0 = vec({5.0, 5.0});
  const GaussianMeasure t0 = ou_transition(moments, x, 0.2, y0, 0.0);
  EXPECT_LE((t0.mean - y0).norm(), 1e-15);
  EXPECT_EQ(t0.covariance.norm(), 0.0);
  const GaussianMeasure far = ou_transition(moments, x, 0.2, y0, 40.0);
  const GaussianMeasure mu = invariant_measure(moments, x, 0.2);
  EXPECT_LE((far.mean - mu.mean).norm(), 1e-12);
  EXPECT_LE((far.covariance - mu.covariance).norm(), 1e-12);
}

TEST(OuTransition, ExactStepIsStationary) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const Vector x = vec({0.0, 0.0});
  const double eps = 0.1;
  const GaussianMeasure mu = invariant_measure(moments, x, eps);
  RandomStream rng(17);
  const int n = 20000;
  Vector sum = Vector::Zero(2);
  const Matrix s = psd_factor(mu.covariance);
  for (int i = 0; i < n; ++i) {
    Vector z(2);
    rng.normals(z, 2);
    const Vector y0 = mu.mean + s * z;
    sum += ou_exact_step(moments, x, eps, y0, 0.7, rng);
  }
  const Vector mean = sum / n;
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(mean(i), mu.mean(i), 4.0 * std::sqrt(mu.covariance(i, i) / n));
}

TEST(AverageUnderInvariant, LinearObservableHasNoBias) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const Vector x = vec({0.4, 0.9});
  const auto est = average_under_invariant([](const Vector&, const Vector& y) { return 2.0 * y(0) - y(1); }, moments,
                                           x, 0.3, QuadratureScheme::gauss_hermite(10));
  const Vector b1 = moments.b1(x);
  EXPECT_NEAR(est.value, 2.0 * b1(0) - b1(1), 1e-13);
}

TEST(AveragedDrift, ClosedFormMatchesQuadrature) {
  auto spec = reference_quadratic_spec_with_jacobian_noise();
  spec.cubic = 0.2;
  const QuadraticTestProblem problem(spec);
  const MomentEvaluator moments(problem);
  const Vector x = vec({0.3, 0.8});
  const auto closed = moments.averaged_b2(x, 0.25);
  ASSERT_TRUE(closed.has_value());
  const StandardGaussianRule rule(QuadratureScheme::gauss_hermite(12), 2);
  const auto quad = integrate_gaussian(invariant_measure(moments, x, 0.25), rule,
                                       [&](const Vector& y) { return Vector(moments.b2(x, y)); });
  EXPECT_LE((*closed - quad.value).norm(), 1e-12);
}
