#pragma once

#include "pcgf/psd.hpp"
#include "pcgf/random.hpp"
#include "pcgf/types.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace pcgf {

/// Analytic (or exactly enumerable) moments of a composition problem.
///
/// Shapes: b1 is m, b2 is n, a1 is m x m, a2 is n x n, mean_grad_g is n x m.
/// w and v are independent, so b2(x, y) = -mean_grad_g(x) * mean_grad_f(y).
class MomentOracle {
 public:
  virtual ~MomentOracle() = default;

  /// B1(x) = E g_w(x).
  virtual Vector b1(const Vector& x) const = 0;
  /// E grad~ g_w(x), n x m.
  virtual Matrix mean_grad_g(const Vector& x) const = 0;
  /// E f_v(y).
  virtual double mean_f(const Vector& y) const = 0;
  /// E grad f_v(y).
  virtual Vector mean_grad_f(const Vector& y) const = 0;
  /// A1(x) = Cov g_w(x).
  virtual Matrix a1(const Vector& x) const = 0;
  /// A2(x, y) = Cov(grad~ g_w(x) grad f_v(y)).
  virtual Matrix a2(const Vector& x, const Vector& y) const = 0;

  /// B2(x, y) = -E[grad~ g_w(x) grad f_v(y)].
  virtual Vector b2(const Vector& x, const Vector& y) const { return -(mean_grad_g(x) * mean_grad_f(y)); }

  /// Symmetric PSD square roots of a1 / a2. Oracles with constant
  /// covariances override these to skip the per-call eigendecomposition.
  virtual Matrix sigma1(const Vector& x) const { return psd_factor(a1(x)); }
  virtual Matrix sigma2(const Vector& x, const Vector& y) const { return psd_factor(a2(x, y)); }

  /// Closed forms of the eps-averaged drift and its x-Jacobian, when known.
  virtual std::optional<Vector> averaged_b2(const Vector& /*x*/, double /*eps*/) const { return std::nullopt; }
  virtual std::optional<Matrix> averaged_b2_jacobian(const Vector& /*x*/, double /*eps*/) const {
    return std::nullopt;
  }
};

/// The composition problem min_x (E f_v o E g_w)(x).
///
/// g_w : R^n -> R^m with Jacobian-transpose grad~ g_w (n x m), f_v : R^m -> R.
/// Instances are immutable; randomness enters only through the caller's
/// stream, so one instance can be shared across concurrent replicas.
class CompositionProblem {
 public:
  virtual ~CompositionProblem() = default;

  virtual int dim_x() const = 0;
  virtual int dim_y() const = 0;

  /// Draws (w, v) from the index distribution. w and v are independent.
  virtual IndexPair sample_indices(RandomStream& rng) const = 0;

  virtual Vector g(AtomIndex w, const Vector& x) const = 0;
  virtual Matrix grad_g(AtomIndex w, const Vector& x) const = 0;
  virtual double f(AtomIndex v, const Vector& y) const = 0;
  virtual Vector grad_f(AtomIndex v, const Vector& y) const = 0;

  /// Analytic moments, or nullptr when only sampling is available.
  virtual const MomentOracle* moment_oracle() const { return nullptr; }
};

/// Problem whose w and v each range over a finite weighted set of atoms.
/// The moment oracle is exact enumeration over the atoms unless a subclass
/// supplies a closed form.
class FiniteIndexProblem : public CompositionProblem {
 public:
  FiniteIndexProblem(std::vector<double> w_weights, std::vector<double> v_weights);
  ~FiniteIndexProblem() override;

  IndexPair sample_indices(RandomStream& rng) const override;
  const MomentOracle* moment_oracle() const override;

  const std::vector<double>& w_weights() const noexcept { return w_weights_; }
  const std::vector<double>& v_weights() const noexcept { return v_weights_; }

 private:
  std::vector<double> w_weights_;
  std::vector<double> v_weights_;
  std::vector<double> w_cumulative_;
  std::vector<double> v_cumulative_;
  std::unique_ptr<MomentOracle> enumeration_;
};

/// Finite-atom problem assembled from callables; handy for one-off test
/// cases that do not warrant a class.
struct AtomMaps {
  int dim_x = 0;
  int dim_y = 0;
  std::function<Vector(AtomIndex, const Vector&)> g;
  std::function<Matrix(AtomIndex, const Vector&)> grad_g;
  std::function<double(AtomIndex, const Vector&)> f;
  std::function<Vector(AtomIndex, const Vector&)> grad_f;
};

class FiniteAtomProblem final : public FiniteIndexProblem {
 public:
  FiniteAtomProblem(AtomMaps maps, std::vector<double> w_weights, std::vector<double> v_weights);

  int dim_x() const override { return maps_.dim_x; }
  int dim_y() const override { return maps_.dim_y; }
  Vector g(AtomIndex w, const Vector& x) const override { return maps_.g(w, x); }
  Matrix grad_g(AtomIndex w, const Vector& x) const override { return maps_.grad_g(w, x); }
  double f(AtomIndex v, const Vector& y) const override { return maps_.f(v, y); }
  Vector grad_f(AtomIndex v, const Vector& y) const override { return maps_.grad_f(v, y); }

 private:
  AtomMaps maps_;
};

/// Problem with a general index sampler and no moment oracle; moments are
/// estimated by Monte Carlo.
class SampledProblem final : public CompositionProblem {
 public:
  SampledProblem(AtomMaps maps, std::function<IndexPair(RandomStream&)> sampler);

  int dim_x() const override { return maps_.dim_x; }
  int dim_y() const override { return maps_.dim_y; }
  IndexPair sample_indices(RandomStream& rng) const override { return sampler_(rng); }
  Vector g(AtomIndex w, const Vector& x) const override { return maps_.g(w, x); }
  Matrix grad_g(AtomIndex w, const Vector& x) const override { return maps_.grad_g(w, x); }
  double f(AtomIndex v, const Vector& y) const override { return maps_.f(v, y); }
  Vector grad_f(AtomIndex v, const Vector& y) const override { return maps_.grad_f(v, y); }

 private:
  AtomMaps maps_;
  std::function<IndexPair(RandomStream&)> sampler_;
};

/// Sample budget for problems without an oracle. The index sample is drawn
/// once from `seed` and reused for every evaluation (sample-average
/// approximation), so estimated moments are deterministic, smooth in (x, y)
/// and safe to evaluate concurrently.
struct MonteCarloBudget {
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

/// Uniform access to B1, B2, A1, A2 and their factors: delegates to the
/// problem's oracle when present, otherwise uses a fixed Monte Carlo sample.
class MomentEvaluator {
 public:
  /// Throws ConfigurationError when the problem has no oracle and the budget
  /// is zero.
  explicit MomentEvaluator(const CompositionProblem& problem, MonteCarloBudget budget = {});

  const CompositionProblem& problem() const noexcept { return *problem_; }
  bool exact() const noexcept { return oracle_ != nullptr; }
  int dim_x() const noexcept { return problem_->dim_x(); }
  int dim_y() const noexcept { return problem_->dim_y(); }

  Estimate<Vector> b1_estimate(const Vector& x) const;
  Estimate<Vector> b2_estimate(const Vector& x, const Vector& y) const;
  Estimate<double> objective_estimate(const Vector& x) const;

  Vector b1(const Vector& x) const;
  Vector b2(const Vector& x, const Vector& y) const;
  Matrix a1(const Vector& x) const;
  Matrix a2(const Vector& x, const Vector& y) const;
  Matrix sigma1(const Vector& x) const;
  Matrix sigma2(const Vector& x, const Vector& y) const;

  /// Gradient-flow drift -E grad~ g(x) grad f(E g(x)) = B2(x, B1(x)).
  Vector gradient_flow_drift(const Vector& x) const { return b2(x, b1(x)); }

  std::optional<Vector> averaged_b2(const Vector& x, double eps) const;
  std::optional<Matrix> averaged_b2_jacobian(const Vector& x, double eps) const;

 private:
  const CompositionProblem* problem_;
  const MomentOracle* oracle_;
  std::vector<IndexPair> sample_;
};

/// (E f_v)(E g_w(x)). Exact with an oracle; otherwise a plug-in Monte Carlo
/// estimate whose standard error combines the outer-sample variance and the
/// delta-method contribution of the inner mean.
Estimate<double> objective(const CompositionProblem& problem, const Vector& x,
                           const MonteCarloBudget& budget = {});

Vector drift_b1(const CompositionProblem& problem, const Vector& x, const MonteCarloBudget& budget = {});
Vector drift_b2(const CompositionProblem& problem, const Vector& x, const Vector& y,
                const MonteCarloBudget& budget = {});

struct FactorOptions {
  MonteCarloBudget budget;
  double jitter = 0.0;
};

/// Symmetric PSD factor S with S S^T = Cov g_w(x) (+ jitter I).
Matrix diffusion_sigma1(const CompositionProblem& problem, const Vector& x, const FactorOptions& options = {});
/// Symmetric PSD factor S with S S^T = Cov(grad~ g_w(x) grad f_v(y)) (+ jitter I).
Matrix diffusion_sigma2(const CompositionProblem& problem, const Vector& x, const Vector& y,
                        const FactorOptions& options = {});

/// Central-difference check of grad_g and grad_f at one probe point. Returns
/// the largest relative discrepancy, normalized by max(1, ||analytic||).
double gradient_consistency_error(const CompositionProblem& problem, AtomIndex w, AtomIndex v,
                                  const Vector& x, const Vector& y, double step = 1e-6);

}  // namespace pcgf
