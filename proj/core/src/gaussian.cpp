#include "pcgf/gaussian.hpp"

#include <map>
#include <mutex>
#include <sstream>

namespace pcgf {

void GaussianMeasure::validate() const {
  const int m = dim();
  if (covariance.rows() != m || covariance.cols() != m) {
    throw ConfigurationError("GaussianMeasure: covariance shape does not match mean");
  }
  const double norm = spectral_norm(covariance);
  if ((covariance - covariance.transpose()).norm() > 1e-12 * std::max(norm, 1e-300)) {
    throw ConfigurationError("GaussianMeasure: covariance is not symmetric");
  }
  const double lo = min_eigenvalue(covariance);
  if (lo < -1e-10 * norm) {
    throw NotPsdError("GaussianMeasure: covariance is not PSD", lo);
  }
}

QuadratureScheme default_scheme(int dim) {
  if (dim <= 3) return QuadratureScheme::gauss_hermite(20);
  return QuadratureScheme::monte_carlo(100000, 0);
}

void gauss_hermite_rule(int order, std::vector<double>& nodes, std::vector<double>& weights) {
  if (order < 1) throw ConfigurationError("gauss_hermite order must be >= 1");
  static std::mutex mutex;
  static std::map<int, std::pair<std::vector<double>, std::vector<double>>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) {
    // Jacobi matrix of the monic probabilists' Hermite recurrence
    // He_{k+1} = z He_k - k He_{k-1}.
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
    for (int k = 1; k < order; ++k) {
      jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    std::vector<double> z(order), w(order);
    double total = 0.0;
    for (int i = 0; i < order; ++i) {
      z[i] = eig.eigenvalues()(i);
      w[i] = eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i);
      total += w[i];
    }
    // Symmetrize: the exact rule is symmetric about 0.
    for (int i = 0; i < order / 2; ++i) {
      const int j = order - 1 - i;
      const double zi = 0.5 * (z[j] - z[i]);
      const double wi = 0.5 * (w[i] + w[j]) / total;
      z[i] = -zi;
      z[j] = zi;
      w[i] = w[j] = wi;
    }
    if (order % 2 == 1) {
      z[order / 2] = 0.0;
      w[order / 2] /= total;
    }
    it = cache.emplace(order, std::make_pair(std::move(z), std::move(w))).first;
  }
  nodes = it->second.first;
  weights = it->second.second;
}

StandardGaussianRule::StandardGaussianRule(const QuadratureScheme& scheme, int dim)
    : dim_(dim), monte_carlo_(scheme.kind == QuadratureKind::monte_carlo) {
  if (dim < 1 || dim > kMaxDim) throw ConfigurationError("quadrature dimension out of range");
  if (monte_carlo_) {
    if (scheme.samples < 2) throw ConfigurationError("monte_carlo quadrature needs at least 2 samples");
    RandomStream rng(scheme.seed);
    nodes_.resize(scheme.samples);
    weights_.assign(scheme.samples, 1.0 / static_cast<double>(scheme.samples));
    for (auto& z : nodes_) rng.normals(z, dim);
    return;
  }
  double count = 1.0;
  for (int d = 0; d < dim; ++d) count *= scheme.order;
  if (scheme.order < 1) throw ConfigurationError("gauss_hermite order must be >= 1");
  if (count > static_cast<double>(scheme.node_cap)) {
    std::ostringstream msg;
    msg << "gauss_hermite tensor rule needs " << count << " nodes, above the cap of " << scheme.node_cap
        << "; use monte_carlo quadrature for this dimension";
    throw ConfigurationError(msg.str());
  }
  std::vector<double> z, w;
  gauss_hermite_rule(scheme.order, z, w);
  const auto total = static_cast<std::size_t>(count);
  nodes_.resize(total);
  weights_.resize(total);
  std::vector<int> digit(dim, 0);
  for (std::size_t i = 0; i < total; ++i) {
    Vector node(dim);
    double weight = 1.0;
    for (int d = 0; d < dim; ++d) {
      node(d) = z[digit[d]];
      weight *= w[digit[d]];
    }
    nodes_[i] = node;
    weights_[i] = weight;
    for (int d = 0; d < dim; ++d) {
      if (++digit[d] < scheme.order) break;
      digit[d] = 0;
    }
  }
}

GaussianMeasure invariant_measure(const MomentEvaluator& moments, const Vector& x, double eps) {
  if (!(eps >= 0.0)) throw DomainError("invariant_measure: epsilon must be >= 0");
  GaussianMeasure mu;
  mu.mean = moments.b1(x);
  const int m = moments.dim_y();
  mu.covariance = eps == 0.0 ? Matrix(Matrix::Zero(m, m)) : Matrix(0.5 * eps * moments.a1(x));
  return mu;
}

GaussianMeasure invariant_measure(const CompositionProblem& problem, const Vector& x, double eps) {
  return invariant_measure(MomentEvaluator(problem), x, eps);
}

GaussianMeasure ou_transition(const MomentEvaluator& moments, const Vector& x_frozen, double eps,
                              const Vector& y0, double dt) {
  if (!(dt >= 0.0)) throw DomainError("ou_transition: dt must be >= 0");
  if (!(eps >= 0.0)) throw DomainError("ou_transition: epsilon must be >= 0");
  const Vector b1 = moments.b1(x_frozen);
  GaussianMeasure out;
  const double decay = std::exp(-dt);
  out.mean = b1 + (y0 - b1) * decay;
  const double scale = 0.5 * eps * -std::expm1(-2.0 * dt);
  const int m = moments.dim_y();
  out.covariance = scale == 0.0 ? Matrix(Matrix::Zero(m, m)) : Matrix(scale * moments.a1(x_frozen));
  return out;
}

Vector ou_exact_step(const MomentEvaluator& moments, const Vector& x_frozen, double eps, const Vector& y0,
                     double dt, RandomStream& rng) {
  if (!(dt >= 0.0)) throw DomainError("ou_exact_step: dt must be >= 0");
  if (!(eps >= 0.0)) throw DomainError("ou_exact_step: epsilon must be >= 0");
  if (dt == 0.0) return y0;
  const Vector b1 = moments.b1(x_frozen);
  Vector out = b1 + (y0 - b1) * std::exp(-dt);
  const double scale = std::sqrt(0.5 * eps * -std::expm1(-2.0 * dt));
  if (scale > 0.0) {
    Vector xi;
    rng.normals(xi, moments.dim_y());
    out.noalias() += scale * (moments.sigma1(x_frozen) * xi);
  }
  return out;
}

Vector ou_exact_step(const CompositionProblem& problem, const Vector& x_frozen, double eps, const Vector& y0,
                     double dt, RandomStream& rng) {
  return ou_exact_step(MomentEvaluator(problem), x_frozen, eps, y0, dt, rng);
}

Vector averaged_drift(const MomentEvaluator& moments, const Vector& x, double eps, const StandardGaussianRule& rule) {
  if (auto closed = moments.averaged_b2(x, eps)) return *closed;
  return average_under_invariant([&](const Vector& xx, const Vector& y) { return moments.b2(xx, y); }, moments, x,
                                 eps, rule)
      .value;
}

std::string to_string(QuadratureKind kind) {
  return kind == QuadratureKind::gauss_hermite ? "gauss_hermite" : "monte_carlo";
}

QuadratureKind quadrature_kind_from_string(const std::string& name) {
  if (name == "gauss_hermite") return QuadratureKind::gauss_hermite;
  if (name == "monte_carlo") return QuadratureKind::monte_carlo;
  throw ConfigurationError("quadrature kind must be \"gauss_hermite\" or \"monte_carlo\" (got \"" + name + "\")");
}

}  // namespace pcgf
