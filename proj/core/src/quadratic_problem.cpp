#include "pcgf/quadratic_problem.hpp"

#include "pcgf/errors.hpp"

#include <cmath>
#include <sstream>

namespace pcgf {

namespace {

std::vector<double> w_weights_of(const QuadraticFamilySpec& spec) {
  std::vector<double> a = {1.0}, b = {1.0};
  if (!spec.a_noise.empty()) {
    a.clear();
    for (const auto& atom : spec.a_noise) a.push_back(atom.weight);
  }
  if (!spec.b_noise.empty()) {
    b.clear();
    for (const auto& atom : spec.b_noise) b.push_back(atom.weight);
  }
  std::vector<double> out;
  out.reserve(a.size() * b.size());
  for (double wa : a)
    for (double wb : b) out.push_back(wa * wb);
  return out;
}

std::vector<double> v_weights_of(const QuadraticFamilySpec& spec) {
  std::vector<double> out;
  for (const auto& atom : spec.targets) out.push_back(atom.weight);
  return out;
}

void validate(const QuadraticFamilySpec& spec) {
  const auto m = spec.a_mean.rows();
  const auto n = spec.a_mean.cols();
  if (m <= 0 || n <= 0) throw ConfigurationError("quadratic family: a_mean must be nonempty");
  if (spec.b_mean.size() != m) throw ConfigurationError("quadratic family: b_mean must have m entries");
  if (spec.targets.empty()) throw ConfigurationError("quadratic family: at least one target is required");
  if (!(spec.clip_radius > 0.0)) throw ConfigurationError("quadratic family: clip_radius must be > 0");
  if (!std::isfinite(spec.cubic)) throw ConfigurationError("quadratic family: cubic must be finite");

  Matrix mean_d = Matrix::Zero(m, n);
  for (const auto& atom : spec.a_noise) {
    if (atom.value.rows() != m || atom.value.cols() != n) {
      throw ConfigurationError("quadratic family: a_noise entries must be m x n");
    }
    mean_d += atom.weight * atom.value;
  }
  Vector mean_b = Vector::Zero(m);
  for (const auto& atom : spec.b_noise) {
    if (atom.value.size() != m) throw ConfigurationError("quadratic family: b_noise entries must have m entries");
    mean_b += atom.weight * atom.value;
  }
  for (const auto& atom : spec.targets) {
    if (atom.value.size() != m) throw ConfigurationError("quadratic family: targets must have m entries");
  }
  if (mean_d.cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, spec.a_mean.norm())) {
    throw ConfigurationError("quadratic family: a_noise must have weighted mean zero");
  }
  if (!spec.b_noise.empty() && mean_b.cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, spec.b_mean.norm())) {
    throw ConfigurationError("quadratic family: b_noise must have weighted mean zero");
  }
}

}  // namespace

class QuadraticOracle final : public MomentOracle {
 public:
  explicit QuadraticOracle(const QuadraticTestProblem& p) : p_(p) {
    const auto& s = p_.spec_;
    constant_sigma1_ = s.a_noise.empty();
    if (constant_sigma1_) sigma1_ = psd_factor(p_.b_cov_);
    constant_sigma2_ = s.a_noise.empty() && std::isinf(s.clip_radius);
    if (constant_sigma2_) {
      sigma2_ = psd_factor(s.a_mean.transpose() * p_.target_cov_ * s.a_mean);
    }
  }

  Vector b1(const Vector& x) const override {
    const auto& s = p_.spec_;
    return s.a_mean * p_.clip(x) + s.b_mean;
  }

  Matrix mean_grad_g(const Vector& x) const override {
    const auto& s = p_.spec_;
    if (std::isinf(s.clip_radius)) return s.a_mean.transpose();
    return p_.clip_jacobian(x) * s.a_mean.transpose();
  }

  double mean_f(const Vector& y) const override {
    const Vector d = y - p_.target_mean_;
    return 0.5 * d.squaredNorm() + 0.5 * p_.target_cov_.trace() + p_.spec_.cubic / 3.0 * y.array().cube().sum();
  }

  Vector mean_grad_f(const Vector& y) const override {
    return outer_residual(y);
  }

  Matrix a1(const Vector& x) const override {
    const auto& s = p_.spec_;
    Matrix cov = p_.b_cov_;
    if (!s.a_noise.empty()) {
      const Vector z = p_.clip(x);
      for (const auto& atom : s.a_noise) {
        const Vector dz = atom.value * z;
        cov += atom.weight * dz * dz.transpose();
      }
    }
    return cov;
  }

  Matrix a2(const Vector& x, const Vector& y) const override {
    const auto& s = p_.spec_;
    Matrix inner = s.a_mean.transpose() * p_.target_cov_ * s.a_mean;
    if (!s.a_noise.empty()) {
      const Vector r = outer_residual(y);
      const Matrix second = r * r.transpose() + p_.target_cov_;
      for (const auto& atom : s.a_noise) inner += atom.weight * atom.value.transpose() * second * atom.value;
    }
    if (std::isinf(s.clip_radius)) return inner;
    const Matrix j = p_.clip_jacobian(x);
    return j * inner * j;
  }

  Matrix sigma1(const Vector& x) const override {
    return constant_sigma1_ ? sigma1_ : psd_factor(a1(x));
  }

  Matrix sigma2(const Vector& x, const Vector& y) const override {
    return constant_sigma2_ ? sigma2_ : psd_factor(a2(x, y));
  }

  std::optional<Vector> averaged_b2(const Vector& x, double eps) const override {
    const Vector mean = b1(x);
    Vector avg_grad_f = mean - p_.target_mean_;
    const double cubic = p_.spec_.cubic;
    if (cubic != 0.0) {
      avg_grad_f += cubic * (mean.cwiseProduct(mean) + 0.5 * eps * a1(x).diagonal());
    }
    return Vector(-(mean_grad_g(x) * avg_grad_f));
  }

  std::optional<Matrix> averaged_b2_jacobian(const Vector& x, double eps) const override {
    const auto& s = p_.spec_;
    if (std::isfinite(s.clip_radius) && x.norm() > s.clip_radius) return std::nullopt;
    Matrix inner = s.a_mean;
    if (s.cubic != 0.0) {
      const Vector mean = b1(x);
      inner += 2.0 * s.cubic * mean.asDiagonal() * s.a_mean;
      for (const auto& atom : s.a_noise) {
        const Vector dx = atom.value * x;
        inner += (s.cubic * eps * atom.weight) * dx.asDiagonal() * atom.value;
      }
    }
    return Matrix(-(s.a_mean.transpose() * inner));
  }

 private:
  Vector outer_residual(const Vector& y) const {
    Vector r = y - p_.target_mean_;
    if (p_.spec_.cubic != 0.0) r += p_.spec_.cubic * y.cwiseProduct(y);
    return r;
  }

  const QuadraticTestProblem& p_;
  bool constant_sigma1_ = false;
  bool constant_sigma2_ = false;
  Matrix sigma1_;
  Matrix sigma2_;
};

QuadraticTestProblem::QuadraticTestProblem(QuadraticFamilySpec spec)
    : FiniteIndexProblem((validate(spec), w_weights_of(spec)), v_weights_of(spec)), spec_(std::move(spec)) {
  const auto m = spec_.a_mean.rows();
  const auto n = spec_.a_mean.cols();
  if (m > kMaxDim || n > kMaxDim) throw ConfigurationError("quadratic family: dimensions exceed kMaxDim");

  target_mean_ = Vector::Zero(m);
  for (const auto& t : spec_.targets) target_mean_ += t.weight * t.value;
  target_cov_ = Matrix::Zero(m, m);
  for (const auto& t : spec_.targets) {
    const Vector d = t.value - target_mean_;
    target_cov_ += t.weight * d * d.transpose();
  }
  b_cov_ = Matrix::Zero(m, m);
  for (const auto& b : spec_.b_noise) b_cov_ += b.weight * b.value * b.value.transpose();

  if (spec_.cubic == 0.0) {
    const Matrix h = hessian();
    const double lo = min_eigenvalue(h);
    if (!(lo > 1e-12 * std::max(1.0, spectral_norm(h)))) {
      std::ostringstream msg;
      msg << "quadratic family: A_mean^T A_mean is not positive definite (min eigenvalue " << lo << ")";
      throw ConfigurationError(msg.str());
    }
    Vector rhs = spec_.a_mean.transpose() * (target_mean_ - spec_.b_mean);
    Vector xstar = h.ldlt().solve(rhs);
    if (std::isfinite(spec_.clip_radius) && xstar.norm() >= spec_.clip_radius) {
      throw ConfigurationError("quadratic family: minimizer lies outside the clip radius");
    }
    minimizer_ = xstar;
  }
  oracle_ = std::make_unique<QuadraticOracle>(*this);
}

QuadraticTestProblem::~QuadraticTestProblem() = default;

Matrix QuadraticTestProblem::hessian() const { return spec_.a_mean.transpose() * spec_.a_mean; }

Vector QuadraticTestProblem::clip(const Vector& x) const {
  const double radius = spec_.clip_radius;
  if (std::isinf(radius)) return x;
  const double r = x.norm();
  if (r <= radius) return x;
  const double s = radius + radius * std::tanh((r - radius) / radius);
  return x * (s / r);
}

Matrix QuadraticTestProblem::clip_jacobian(const Vector& x) const {
  const int n = static_cast<int>(x.size());
  const double radius = spec_.clip_radius;
  const double r = x.norm();
  if (std::isinf(radius) || r <= radius) return Matrix::Identity(n, n);
  const double th = std::tanh((r - radius) / radius);
  const double s = radius + radius * th;
  const double ds = 1.0 - th * th;
  const Vector u = x / r;
  const Matrix uu = u * u.transpose();
  return (s / r) * (Matrix::Identity(n, n) - uu) + ds * uu;
}

Vector QuadraticTestProblem::g(AtomIndex w, const Vector& x) const {
  const Vector z = clip(x);
  Vector out = spec_.a_mean * z + spec_.b_mean;
  if (!spec_.a_noise.empty()) out += spec_.a_noise[a_index(w)].value * z;
  if (!spec_.b_noise.empty()) out += spec_.b_noise[b_index(w)].value;
  return out;
}

Matrix QuadraticTestProblem::grad_g(AtomIndex w, const Vector& x) const {
  Matrix a = spec_.a_mean;
  if (!spec_.a_noise.empty()) a += spec_.a_noise[a_index(w)].value;
  if (std::isinf(spec_.clip_radius)) return a.transpose();
  return clip_jacobian(x) * a.transpose();
}

double QuadraticTestProblem::f(AtomIndex v, const Vector& y) const {
  const Vector d = y - spec_.targets[v].value;
  double out = 0.5 * d.squaredNorm();
  if (spec_.cubic != 0.0) out += spec_.cubic / 3.0 * y.array().cube().sum();
  return out;
}

Vector QuadraticTestProblem::grad_f(AtomIndex v, const Vector& y) const {
  Vector out = y - spec_.targets[v].value;
  if (spec_.cubic != 0.0) out += spec_.cubic * y.cwiseProduct(y);
  return out;
}

const MomentOracle* QuadraticTestProblem::moment_oracle() const { return oracle_.get(); }

// ---------------------------------------------------------------------------

QuadraticFamilySpec reference_quadratic_spec() {
  QuadraticFamilySpec s;
  s.a_mean = Matrix(2, 2);
  s.a_mean << 1.0, 0.2,
             -0.3, 0.9;
  s.b_mean = Vector(2);
  s.b_mean << 0.5, -0.25;
  auto vec2 = [](double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
  };
  s.b_noise = {{vec2(0.6, 0.0), 0.25}, {vec2(-0.6, 0.0), 0.25}, {vec2(0.0, 0.4), 0.25}, {vec2(0.0, -0.4), 0.25}};
  s.targets = {{vec2(1.5, 0.5), 0.25}, {vec2(0.5, 0.5), 0.25}, {vec2(1.0, 1.1), 0.5}};
  return s;
}

QuadraticFamilySpec reference_quadratic_spec_with_jacobian_noise() {
  QuadraticFamilySpec s = reference_quadratic_spec();
  Matrix d(2, 2);
  d << 0.3, 0.0,
       0.1, 0.2;
  s.a_noise = {{d, 0.5}, {Matrix(-d), 0.5}};
  return s;
}

std::shared_ptr<QuadraticTestProblem> reference_quadratic_problem() {
  return std::make_shared<QuadraticTestProblem>(reference_quadratic_spec());
}

std::shared_ptr<QuadraticTestProblem> reference_quadratic_problem_with_jacobian_noise() {
  return std::make_shared<QuadraticTestProblem>(reference_quadratic_spec_with_jacobian_noise());
}

}  // namespace pcgf
