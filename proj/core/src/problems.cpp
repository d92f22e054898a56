#include "pcgf/problems.hpp"

#include "pcgf/errors.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace pcgf {

namespace {

std::vector<double> validated_cumulative(const std::vector<double>& weights, const char* name) {
  if (weights.empty()) {
    throw ConfigurationError(std::string(name) + " weights must be nonempty");
  }
  double total = 0.0;
  std::vector<double> cumulative;
  cumulative.reserve(weights.size());
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigurationError(std::string(name) + " weights must be nonnegative");
    total += w;
    cumulative.push_back(total);
  }
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream msg;
    msg << name << " weights must sum to 1 within 1e-12 (sum = " << total << ")";
    throw ConfigurationError(msg.str());
  }
  cumulative.back() = 1.0;
  return cumulative;
}

/// Exact moments of a finite-atom problem by enumeration.
class EnumerationOracle final : public MomentOracle {
 public:
  explicit EnumerationOracle(const FiniteIndexProblem& p) : p_(p) {}

  Vector b1(const Vector& x) const override {
    Vector acc = Vector::Zero(p_.dim_y());
    const auto& ww = p_.w_weights();
    for (std::size_t i = 0; i < ww.size(); ++i) {
      if (ww[i] != 0.0) acc += ww[i] * p_.g(i, x);
    }
    return acc;
  }

  Matrix mean_grad_g(const Vector& x) const override {
    Matrix acc = Matrix::Zero(p_.dim_x(), p_.dim_y());
    const auto& ww = p_.w_weights();
    for (std::size_t i = 0; i < ww.size(); ++i) {
      if (ww[i] != 0.0) acc += ww[i] * p_.grad_g(i, x);
    }
    return acc;
  }

  double mean_f(const Vector& y) const override {
    double acc = 0.0;
    const auto& vw = p_.v_weights();
    for (std::size_t j = 0; j < vw.size(); ++j) {
      if (vw[j] != 0.0) acc += vw[j] * p_.f(j, y);
    }
    return acc;
  }

  Vector mean_grad_f(const Vector& y) const override {
    Vector acc = Vector::Zero(p_.dim_y());
    const auto& vw = p_.v_weights();
    for (std::size_t j = 0; j < vw.size(); ++j) {
      if (vw[j] != 0.0) acc += vw[j] * p_.grad_f(j, y);
    }
    return acc;
  }

  Matrix a1(const Vector& x) const override {
    const Vector mean = b1(x);
    Matrix acc = Matrix::Zero(p_.dim_y(), p_.dim_y());
    const auto& ww = p_.w_weights();
    for (std::size_t i = 0; i < ww.size(); ++i) {
      if (ww[i] == 0.0) continue;
      const Vector d = p_.g(i, x) - mean;
      acc += ww[i] * d * d.transpose();
    }
    return acc;
  }

  Matrix a2(const Vector& x, const Vector& y) const override {
    const Vector mean = b2(x, y);
    Matrix acc = Matrix::Zero(p_.dim_x(), p_.dim_x());
    const auto& ww = p_.w_weights();
    const auto& vw = p_.v_weights();
    for (std::size_t j = 0; j < vw.size(); ++j) {
      if (vw[j] == 0.0) continue;
      const Vector fj = p_.grad_f(j, y);
      for (std::size_t i = 0; i < ww.size(); ++i) {
        if (ww[i] == 0.0) continue;
        // b2 carries the minus sign; the covariance does not care.
        const Vector d = -(p_.grad_g(i, x) * fj) - mean;
        acc += (ww[i] * vw[j]) * d * d.transpose();
      }
    }
    return acc;
  }

 private:
  const FiniteIndexProblem& p_;
};

template <typename T>
T squared(const T& v) {
  return v.cwiseProduct(v);
}

}  // namespace

FiniteIndexProblem::FiniteIndexProblem(std::vector<double> w_weights, std::vector<double> v_weights)
    : w_weights_(std::move(w_weights)),
      v_weights_(std::move(v_weights)),
      w_cumulative_(validated_cumulative(w_weights_, "w")),
      v_cumulative_(validated_cumulative(v_weights_, "v")),
      enumeration_(std::make_unique<EnumerationOracle>(*this)) {}

FiniteIndexProblem::~FiniteIndexProblem() = default;

IndexPair FiniteIndexProblem::sample_indices(RandomStream& rng) const {
  IndexPair out;
  out.w = rng.discrete(w_cumulative_);
  out.v = rng.discrete(v_cumulative_);
  return out;
}

const MomentOracle* FiniteIndexProblem::moment_oracle() const { return enumeration_.get(); }

FiniteAtomProblem::FiniteAtomProblem(AtomMaps maps, std::vector<double> w_weights, std::vector<double> v_weights)
    : FiniteIndexProblem(std::move(w_weights), std::move(v_weights)), maps_(std::move(maps)) {
  if (maps_.dim_x <= 0 || maps_.dim_y <= 0 || maps_.dim_x > kMaxDim || maps_.dim_y > kMaxDim) {
    throw ConfigurationError("FiniteAtomProblem: dimensions must be in [1, kMaxDim]");
  }
  if (!maps_.g || !maps_.grad_g || !maps_.f || !maps_.grad_f) {
    throw ConfigurationError("FiniteAtomProblem: all four maps must be provided");
  }
}

SampledProblem::SampledProblem(AtomMaps maps, std::function<IndexPair(RandomStream&)> sampler)
    : maps_(std::move(maps)), sampler_(std::move(sampler)) {
  if (maps_.dim_x <= 0 || maps_.dim_y <= 0 || maps_.dim_x > kMaxDim || maps_.dim_y > kMaxDim) {
    throw ConfigurationError("SampledProblem: dimensions must be in [1, kMaxDim]");
  }
  if (!maps_.g || !maps_.grad_g || !maps_.f || !maps_.grad_f || !sampler_) {
    throw ConfigurationError("SampledProblem: maps and sampler must be provided");
  }
}

// ---------------------------------------------------------------------------

MomentEvaluator::MomentEvaluator(const CompositionProblem& problem, MonteCarloBudget budget)
    : problem_(&problem), oracle_(problem.moment_oracle()) {
  if (oracle_ != nullptr) return;
  if (budget.samples == 0) {
    throw ConfigurationError(
        "problem has no moment oracle and the Monte Carlo sample budget is zero");
  }
  if (budget.samples < 2) {
    throw ConfigurationError("Monte Carlo sample budget must be at least 2");
  }
  RandomStream rng(derive_seed(budget.seed, 0x6d6f6d656e7473ULL));
  sample_.reserve(budget.samples);
  for (std::size_t i = 0; i < budget.samples; ++i) sample_.push_back(problem.sample_indices(rng));
}

Estimate<Vector> MomentEvaluator::b1_estimate(const Vector& x) const {
  if (oracle_) {
    Vector v = oracle_->b1(x);
    return {v, Vector::Zero(v.size())};
  }
  const int m = dim_y();
  Vector sum = Vector::Zero(m), sum_sq = Vector::Zero(m);
  for (const auto& idx : sample_) {
    const Vector gx = problem_->g(idx.w, x);
    sum += gx;
    sum_sq += squared(gx);
  }
  const double n = static_cast<double>(sample_.size());
  Vector mean = sum / n;
  Vector var = ((sum_sq / n) - squared(mean)) * (n / (n - 1.0));
  return {mean, (var.cwiseMax(0.0) / n).cwiseSqrt()};
}

Estimate<Vector> MomentEvaluator::b2_estimate(const Vector& x, const Vector& y) const {
  if (oracle_) {
    Vector v = oracle_->b2(x, y);
    return {v, Vector::Zero(v.size())};
  }
  const int n_dim = dim_x();
  Vector sum = Vector::Zero(n_dim), sum_sq = Vector::Zero(n_dim);
  for (const auto& idx : sample_) {
    const Vector h = -(problem_->grad_g(idx.w, x) * problem_->grad_f(idx.v, y));
    sum += h;
    sum_sq += squared(h);
  }
  const double n = static_cast<double>(sample_.size());
  Vector mean = sum / n;
  Vector var = ((sum_sq / n) - squared(mean)) * (n / (n - 1.0));
  return {mean, (var.cwiseMax(0.0) / n).cwiseSqrt()};
}

Estimate<double> MomentEvaluator::objective_estimate(const Vector& x) const {
  if (oracle_) return {oracle_->mean_f(oracle_->b1(x)), 0.0};
  const Vector inner = b1(x);
  const Matrix inner_cov = a1(x);
  double sum = 0.0, sum_sq = 0.0;
  Vector grad = Vector::Zero(dim_y());
  for (const auto& idx : sample_) {
    const double fv = problem_->f(idx.v, inner);
    sum += fv;
    sum_sq += fv * fv;
    grad += problem_->grad_f(idx.v, inner);
  }
  const double n = static_cast<double>(sample_.size());
  const double mean = sum / n;
  grad /= n;
  const double outer_var = std::max(0.0, (sum_sq / n - mean * mean) * n / (n - 1.0));
  const double inner_var = std::max(0.0, grad.dot(inner_cov * grad));
  return {mean, std::sqrt((outer_var + inner_var) / n)};
}

Vector MomentEvaluator::b1(const Vector& x) const {
  return oracle_ ? oracle_->b1(x) : b1_estimate(x).value;
}

Vector MomentEvaluator::b2(const Vector& x, const Vector& y) const {
  return oracle_ ? oracle_->b2(x, y) : b2_estimate(x, y).value;
}

Matrix MomentEvaluator::a1(const Vector& x) const {
  if (oracle_) return oracle_->a1(x);
  const int m = dim_y();
  Vector mean = Vector::Zero(m);
  for (const auto& idx : sample_) mean += problem_->g(idx.w, x);
  mean /= static_cast<double>(sample_.size());
  Matrix acc = Matrix::Zero(m, m);
  for (const auto& idx : sample_) {
    const Vector d = problem_->g(idx.w, x) - mean;
    acc += d * d.transpose();
  }
  return acc / static_cast<double>(sample_.size() - 1);
}

Matrix MomentEvaluator::a2(const Vector& x, const Vector& y) const {
  if (oracle_) return oracle_->a2(x, y);
  const int n_dim = dim_x();
  const Vector mean = b2(x, y);
  Matrix acc = Matrix::Zero(n_dim, n_dim);
  for (const auto& idx : sample_) {
    const Vector d = -(problem_->grad_g(idx.w, x) * problem_->grad_f(idx.v, y)) - mean;
    acc += d * d.transpose();
  }
  return acc / static_cast<double>(sample_.size() - 1);
}

Matrix MomentEvaluator::sigma1(const Vector& x) const {
  return oracle_ ? oracle_->sigma1(x) : psd_factor(a1(x));
}

Matrix MomentEvaluator::sigma2(const Vector& x, const Vector& y) const {
  return oracle_ ? oracle_->sigma2(x, y) : psd_factor(a2(x, y));
}

std::optional<Vector> MomentEvaluator::averaged_b2(const Vector& x, double eps) const {
  return oracle_ ? oracle_->averaged_b2(x, eps) : std::nullopt;
}

std::optional<Matrix> MomentEvaluator::averaged_b2_jacobian(const Vector& x, double eps) const {
  return oracle_ ? oracle_->averaged_b2_jacobian(x, eps) : std::nullopt;
}

// ---------------------------------------------------------------------------

Estimate<double> objective(const CompositionProblem& problem, const Vector& x, const MonteCarloBudget& budget) {
  return MomentEvaluator(problem, budget).objective_estimate(x);
}

Vector drift_b1(const CompositionProblem& problem, const Vector& x, const MonteCarloBudget& budget) {
  return MomentEvaluator(problem, budget).b1(x);
}

Vector drift_b2(const CompositionProblem& problem, const Vector& x, const Vector& y,
                const MonteCarloBudget& budget) {
  return MomentEvaluator(problem, budget).b2(x, y);
}

Matrix diffusion_sigma1(const CompositionProblem& problem, const Vector& x, const FactorOptions& options) {
  const MomentEvaluator moments(problem, options.budget);
  if (options.jitter == 0.0) return moments.sigma1(x);
  PsdFactorOptions psd;
  psd.jitter = options.jitter;
  return psd_factor(moments.a1(x), psd);
}

Matrix diffusion_sigma2(const CompositionProblem& problem, const Vector& x, const Vector& y,
                        const FactorOptions& options) {
  const MomentEvaluator moments(problem, options.budget);
  if (options.jitter == 0.0) return moments.sigma2(x, y);
  PsdFactorOptions psd;
  psd.jitter = options.jitter;
  return psd_factor(moments.a2(x, y), psd);
}

double gradient_consistency_error(const CompositionProblem& problem, AtomIndex w, AtomIndex v,
                                  const Vector& x, const Vector& y, double step) {
  const int n = problem.dim_x();
  const int m = problem.dim_y();
  const Matrix jg = problem.grad_g(w, x);
  Matrix fd_g(n, m);
  for (int k = 0; k < n; ++k) {
    const double h = step * std::max(1.0, std::abs(x[k]));
    Vector xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    fd_g.row(k) = ((problem.g(w, xp) - problem.g(w, xm)) / (2.0 * h)).transpose();
  }
  const Vector gf = problem.grad_f(v, y);
  Vector fd_f(m);
  for (int k = 0; k < m; ++k) {
    const double h = step * std::max(1.0, std::abs(y[k]));
    Vector yp = y, ym = y;
    yp[k] += h;
    ym[k] -= h;
    fd_f[k] = (problem.f(v, yp) - problem.f(v, ym)) / (2.0 * h);
  }
  const double eg = (fd_g - jg).norm() / std::max(1.0, jg.norm());
  const double ef = (fd_f - gf).norm() / std::max(1.0, gf.norm());
  return std::max(eg, ef);
}

}  // namespace pcgf
