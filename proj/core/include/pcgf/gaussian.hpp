#pragma once

#include "pcgf/errors.hpp"
#include "pcgf/problems.hpp"
#include "pcgf/psd.hpp"
#include "pcgf/random.hpp"
#include "pcgf/types.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace pcgf {

/// N(mean, covariance). `validate()` checks symmetry within 1e-12 ||C|| and
/// min eigenvalue >= -1e-10 ||C||.
struct GaussianMeasure {
  Vector mean;
  Matrix covariance;

  int dim() const noexcept { return static_cast<int>(mean.size()); }
  void validate() const;
};

enum class QuadratureKind { gauss_hermite, monte_carlo };

/// How Gaussian expectations are computed.
///
/// gauss_hermite: tensor product of `order`-point probabilists' rules in the
/// whitened coordinates. monte_carlo: `samples` standard-normal nodes drawn
/// from a stream seeded with `seed`; the same scheme yields the same nodes on
/// every call, so averages are smooth in x (common random numbers).
struct QuadratureScheme {
  QuadratureKind kind = QuadratureKind::gauss_hermite;
  int order = 20;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
  std::size_t node_cap = 100000;

  static QuadratureScheme gauss_hermite(int order = 20) {
    QuadratureScheme s;
    s.order = order;
    return s;
  }
  static QuadratureScheme monte_carlo(std::size_t samples = 100000, std::uint64_t seed = 0) {
    QuadratureScheme s;
    s.kind = QuadratureKind::monte_carlo;
    s.samples = samples;
    s.seed = seed;
    return s;
  }
};

/// Order-20 Gauss-Hermite for dim <= 3, Monte Carlo with 1e5 samples above.
QuadratureScheme default_scheme(int dim);

/// Nodes and weights of the 1-D probabilists' Gauss-Hermite rule
/// (weight exp(-z^2/2)/sqrt(2 pi), weights sum to 1), by Golub-Welsch.
void gauss_hermite_rule(int order, std::vector<double>& nodes, std::vector<double>& weights);

/// A standard-normal rule in `dim` dimensions, ready to be mapped onto any
/// Gaussian by y = mean + S z with S = psd_factor(covariance).
class StandardGaussianRule {
 public:
  /// Throws ConfigurationError when a Gauss-Hermite tensor rule would
  /// exceed the node cap, or for order < 1 / zero samples.
  StandardGaussianRule(const QuadratureScheme& scheme, int dim);

  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return weights_.size(); }
  bool monte_carlo() const noexcept { return monte_carlo_; }
  const Vector& node(std::size_t i) const { return nodes_[i]; }
  double weight(std::size_t i) const { return weights_[i]; }

 private:
  int dim_;
  bool monte_carlo_;
  std::vector<Vector> nodes_;
  std::vector<double> weights_;
};

namespace detail {

inline double square_of(double v) { return v * v; }
template <typename T>
T square_of(const T& v) {
  return v.cwiseProduct(v);
}
inline double sqrt_of(double v) { return std::sqrt(std::max(v, 0.0)); }
template <typename T>
T sqrt_of(const T& v) {
  return v.cwiseMax(0.0).cwiseSqrt();
}
inline double zero_like(double) { return 0.0; }
template <typename T>
T zero_like(const T& v) {
  return T::Zero(v.rows(), v.cols());
}

}  // namespace detail

/// E q(Y) for Y ~ measure. q may return double, Vector or Matrix.
/// Monte Carlo rules also return the standard error (elementwise);
/// Gauss-Hermite and point masses report zero error.
template <typename Q>
auto integrate_gaussian(const GaussianMeasure& measure, const StandardGaussianRule& rule, Q&& q)
    -> Estimate<std::decay_t<decltype(q(measure.mean))>> {
  using R = std::decay_t<decltype(q(measure.mean))>;
  if (rule.dim() != measure.dim()) throw ConfigurationError("quadrature rule dimension does not match measure");
  if (measure.covariance.cwiseAbs().maxCoeff() == 0.0) {
    R v = q(measure.mean);
    return {v, detail::zero_like(v)};
  }
  const Matrix s = psd_factor(measure.covariance);
  Vector y(measure.dim());
  y = measure.mean + s * rule.node(0);
  R first = q(y);
  R sum = rule.weight(0) * first;
  R sum_sq = rule.weight(0) * detail::square_of(first);
  for (std::size_t i = 1; i < rule.size(); ++i) {
    y.noalias() = measure.mean + s * rule.node(i);
    const R v = q(y);
    sum += rule.weight(i) * v;
    if (rule.monte_carlo()) sum_sq += rule.weight(i) * detail::square_of(v);
  }
  if (!rule.monte_carlo()) return {sum, detail::zero_like(sum)};
  const double n = static_cast<double>(rule.size());
  R var = sum_sq - detail::square_of(sum);
  var *= n / (n - 1.0);
  const R scaled = var / n;
  R se = detail::sqrt_of(scaled);
  return {sum, se};
}

/// mu^{x,eps} = N(B1(x), (eps/2) A1(x)). eps = 0 gives the point mass at B1.
GaussianMeasure invariant_measure(const MomentEvaluator& moments, const Vector& x, double eps);
GaussianMeasure invariant_measure(const CompositionProblem& problem, const Vector& x, double eps);

/// Exact transition of the frozen-x fast process
///     dy = (B1(x) - y) dt + sqrt(eps) Sigma1(x) dW
/// over time dt: mean B1 + (y0 - B1) e^{-dt}, covariance
/// (eps/2)(1 - e^{-2 dt}) A1(x).
GaussianMeasure ou_transition(const MomentEvaluator& moments, const Vector& x_frozen, double eps,
                              const Vector& y0, double dt);

/// One exact sample of the transition above.
Vector ou_exact_step(const MomentEvaluator& moments, const Vector& x_frozen, double eps, const Vector& y0,
                     double dt, RandomStream& rng);
Vector ou_exact_step(const CompositionProblem& problem, const Vector& x_frozen, double eps, const Vector& y0,
                     double dt, RandomStream& rng);

/// The averaging operator q-bar^eps(x) = integral of q(x, Y) mu^{x,eps}(dY).
template <typename Q>
auto average_under_invariant(Q&& q, const MomentEvaluator& moments, const Vector& x, double eps,
                             const QuadratureScheme& scheme) {
  const GaussianMeasure mu = invariant_measure(moments, x, eps);
  const StandardGaussianRule rule(scheme, mu.dim());
  return integrate_gaussian(mu, rule, [&](const Vector& y) { return q(x, y); });
}

/// Same, reusing a prebuilt rule (hot loops).
template <typename Q>
auto average_under_invariant(Q&& q, const MomentEvaluator& moments, const Vector& x, double eps,
                             const StandardGaussianRule& rule) {
  const GaussianMeasure mu = invariant_measure(moments, x, eps);
  return integrate_gaussian(mu, rule, [&](const Vector& y) { return q(x, y); });
}

/// B2-bar^eps(x): the closed form when the problem provides one, otherwise
/// quadrature of B2(x, .) with `rule`.
Vector averaged_drift(const MomentEvaluator& moments, const Vector& x, double eps, const StandardGaussianRule& rule);

std::string to_string(QuadratureKind kind);
QuadratureKind quadrature_kind_from_string(const std::string& name);

}  // namespace pcgf
