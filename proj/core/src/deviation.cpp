#include "pcgf/deviation.hpp"

#include "pcgf/errors.hpp"
#include "pcgf/psd.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <sstream>

namespace pcgf {

namespace {

// Gauss-Kronrod (7, 15) on [-1, 1]: Kronrod abscissae in decreasing order,
// odd entries (1, 3, 5, 7) are the Gauss points.
constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851, 0.864864423359769072789712788640926,
    0.741531185599394439863864773280788, 0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204, 0.104790010322250183839876322541518,
    0.140653259715525918745189590510238, 0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kWg = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                                       0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

/// The 15 Kronrod points of [a, b] in increasing order with their weights,
/// and the Gauss weight of each point (0 for Kronrod-only points).
struct Panel {
  std::array<double, 15> t;
  std::array<double, 15> wk;
  std::array<double, 15> wg;
};

Panel make_panel(double a, double b) {
  Panel p{};
  const double c = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  for (int i = 0; i < 7; ++i) {
    const double gw = (i % 2 == 1) ? kWg[i / 2] : 0.0;
    p.t[i] = c - half * kXgk[i];
    p.wk[i] = half * kWgk[i];
    p.wg[i] = half * gw;
    p.t[14 - i] = c + half * kXgk[i];
    p.wk[14 - i] = half * kWgk[i];
    p.wg[14 - i] = half * gw;
  }
  p.t[7] = c;
  p.wk[7] = half * kWgk[7];
  p.wg[7] = half * kWg[3];
  return p;
}

std::vector<Vector> unit_offsets(int m, double r) {
  std::vector<Vector> out;
  for (int i = 0; i < m; ++i) {
    Vector e = Vector::Zero(m);
    e(i) = r;
    out.push_back(e);
    out.push_back(-e);
  }
  return out;
}

double scaled_step(double step, const Vector& v) { return step * (1.0 + v.cwiseAbs().maxCoeff()); }

/// Standard-normal Gauss-Hermite nodes mapped by `factor`.
void mapped_rule(int order, const Matrix& factor, std::vector<Vector>& nodes, std::vector<double>& weights) {
  const StandardGaussianRule rule(QuadratureScheme::gauss_hermite(order), static_cast<int>(factor.rows()));
  nodes.resize(rule.size());
  weights.resize(rule.size());
  for (std::size_t i = 0; i < rule.size(); ++i) {
    nodes[i] = factor * rule.node(i);
    weights[i] = rule.weight(i);
  }
}

}  // namespace

FrozenOu frozen_ou(const MomentEvaluator& moments, const Vector& x, double eps) {
  if (!(eps >= 0.0)) throw DomainError("epsilon must be >= 0");
  FrozenOu ou;
  ou.mean = moments.b1(x);
  ou.a1 = moments.a1(x);
  ou.sigma1 = moments.sigma1(x);
  ou.eps = eps;
  return ou;
}

double ou_generator_apply(const FrozenOu& ou, const ScalarField& h, const Vector& y, double step) {
  const int m = ou.dim();
  if (y.size() != m) throw ConfigurationError("ou_generator_apply: y has the wrong dimension");
  const double s = scaled_step(step, y);
  const double h0 = h(y);
  Vector grad(m);
  Matrix hess(m, m);
  Vector yp = y, ym = y;
  for (int i = 0; i < m; ++i) {
    yp(i) = y(i) + s;
    ym(i) = y(i) - s;
    const double fp = h(yp), fm = h(ym);
    grad(i) = (fp - fm) / (2.0 * s);
    hess(i, i) = (fp - 2.0 * h0 + fm) / (s * s);
    yp(i) = ym(i) = y(i);
  }
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      if (ou.a1(i, j) == 0.0 && ou.a1(j, i) == 0.0) {
        hess(i, j) = hess(j, i) = 0.0;
        continue;
      }
      Vector z = y;
      z(i) += s; z(j) += s; const double fpp = h(z);
      z(j) -= 2 * s;        const double fpm = h(z);
      z(i) -= 2 * s;        const double fmm = h(z);
      z(j) += 2 * s;        const double fmp = h(z);
      hess(i, j) = hess(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * s * s);
    }
  }
  const double diffusion = 0.5 * ou.eps * (ou.a1.cwiseProduct(hess)).sum();
  return diffusion + (ou.mean - y).dot(grad);
}

double ou_generator_apply(const MomentEvaluator& moments, const Vector& x, double eps, const ScalarField& h,
                          const Vector& y, double step) {
  return ou_generator_apply(frozen_ou(moments, x, eps), h, y, step);
}

// ---------------------------------------------------------------------------
// Correctors

QuadraticModel fit_quadratic(const FrozenOu& ou, const ScalarField& h) {
  const int m = ou.dim();
  QuadraticModel model;
  model.linear = Vector::Zero(m);
  model.quadratic = Matrix::Zero(m, m);
  const double s = 1.0;
  const Vector& c = ou.mean;
  model.constant = h(c);
  Vector z = c;
  for (int i = 0; i < m; ++i) {
    z(i) = c(i) + s;
    const double fp = h(z);
    z(i) = c(i) - s;
    const double fm = h(z);
    z(i) = c(i);
    model.linear(i) = (fp - fm) / (2.0 * s);
    model.quadratic(i, i) = (fp - 2.0 * model.constant + fm) / (2.0 * s * s);
  }
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      Vector w = c;
      w(i) += s; w(j) += s; const double fpp = h(w);
      w(j) -= 2 * s;        const double fpm = h(w);
      w(i) -= 2 * s;        const double fmm = h(w);
      w(j) += 2 * s;        const double fmp = h(w);
      model.quadratic(i, j) = model.quadratic(j, i) = (fpp - fpm - fmp + fmm) / (8.0 * s * s);
    }
  }
  double worst = 0.0, scale = std::abs(model.constant);
  for (double r : {0.5, 2.0, 6.0}) {
    Vector e(m);
    for (int i = 0; i < m; ++i) e(i) = r * std::sin(1.3 * (i + 1) + 2.1 * r);
    const double truth = h(c + e);
    const double fit = model.constant + model.linear.dot(e) + e.dot(model.quadratic * e);
    worst = std::max(worst, std::abs(truth - fit));
    scale = std::max(scale, std::abs(truth));
  }
  model.exact = worst <= 1e-9 * (1.0 + scale);
  return model;
}

double Corrector::raw_value(const Vector& y) const {
  const Vector e = y - ou_.mean;
  double total = 0.0;
  Vector z(ou_.dim());
  for (std::size_t i = 0; i < t_nodes_.size(); ++i) {
    const double t = t_nodes_[i];
    const double decay = std::exp(-t);
    const double spread = std::sqrt(0.5 * ou_.eps * -std::expm1(-2.0 * t));
    double inner = 0.0;
    for (std::size_t j = 0; j < gh_nodes_.size(); ++j) {
      z.noalias() = ou_.mean + decay * e + spread * gh_nodes_[j];
      inner += gh_weights_[j] * h_(z);
    }
    total += t_weights_[i] * inner;
  }
  return -total;
}

double Corrector::value(const Vector& y) const {
  if (y.size() != ou_.dim()) throw ConfigurationError("corrector: y has the wrong dimension");
  if (method_ == CorrectorMethod::closed_form) {
    const Vector e = y - ou_.mean;
    return -g_.dot(e) - 0.5 * e.dot(q_ * e) + 0.25 * ou_.eps * (ou_.a1 * q_).trace();
  }
  return raw_value(y) - centering_;
}

Vector Corrector::grad_y(const Vector& y) const {
  if (y.size() != ou_.dim()) throw ConfigurationError("corrector: y has the wrong dimension");
  if (method_ == CorrectorMethod::closed_form) {
    return -g_ - q_ * (y - ou_.mean);
  }
  const int m = ou_.dim();
  const double s = scaled_step(gradient_step_, y);
  Vector grad(m);
  Vector z = y;
  for (int i = 0; i < m; ++i) {
    z(i) = y(i) + s;
    const double fp = raw_value(z);
    z(i) = y(i) - s;
    const double fm = raw_value(z);
    z(i) = y(i);
    grad(i) = (fp - fm) / (2.0 * s);
  }
  return grad;
}

Corrector solve_poisson(const FrozenOu& ou, ScalarField h, const CorrectorOptions& options, int coordinate) {
  const int m = ou.dim();
  Corrector u;
  u.coordinate_ = coordinate;
  u.ou_ = ou;
  u.gradient_step_ = options.gradient_step;

  const GaussianMeasure mu = ou.invariant();
  const StandardGaussianRule centering_rule(QuadratureScheme::gauss_hermite(options.gauss_hermite_order + 4), m);
  const double h_mean = integrate_gaussian(mu, centering_rule, h).value;

  CorrectorMethod method = CorrectorMethod::semigroup_quadrature;
  if (!options.method || *options.method == CorrectorMethod::closed_form) {
    const QuadraticModel model = fit_quadratic(ou, h);
    const double implied = model.constant + 0.5 * ou.eps * (ou.a1 * model.quadratic).trace();
    const double scale = 1.0 + std::abs(model.constant) + model.linear.cwiseAbs().sum() +
                         model.quadratic.cwiseAbs().sum();
    const bool centered = std::abs(implied) <= 1e-9 * scale;
    if (model.exact && centered) {
      method = CorrectorMethod::closed_form;
      u.g_ = model.linear;
      u.q_ = model.quadratic;
    } else if (options.method) {
      throw ConfigurationError(model.exact ? "closed-form corrector: right-hand side is not centered under mu"
                                           : "closed-form corrector: right-hand side is not quadratic in y");
    }
  }
  u.method_ = method;
  if (method == CorrectorMethod::closed_form) return u;

  if (!(options.panel_length > 0.0) || options.consecutive_small < 1) {
    throw ConfigurationError("corrector: invalid time-quadrature settings");
  }
  u.h_ = std::move(h);
  mapped_rule(options.gauss_hermite_order, ou.sigma1, u.gh_nodes_, u.gh_weights_);

  std::vector<Vector> probes{ou.mean};
  for (const auto& d : unit_offsets(m, options.probe_radius)) probes.push_back(ou.mean + d);
  for (const auto& p : options.extra_probes) {
    if (p.size() != m) throw ConfigurationError("corrector: probe has the wrong dimension");
    probes.push_back(p);
  }

  auto semigroup = [&](double t, const Vector& y) {
    const double decay = std::exp(-t);
    const double spread = std::sqrt(0.5 * ou.eps * -std::expm1(-2.0 * t));
    double inner = 0.0;
    Vector z(m);
    for (std::size_t j = 0; j < u.gh_nodes_.size(); ++j) {
      z.noalias() = ou.mean + decay * (y - ou.mean) + spread * u.gh_nodes_[j];
      inner += u.gh_weights_[j] * u.h_(z);
    }
    return inner;
  };

  int small_run = 0;
  bool done = false;
  // Accepts [a, b] or bisects it; appends nodes in increasing t.
  std::function<void(double, double, int)> accept = [&](double a, double b, int depth) {
    const Panel panel = make_panel(a, b);
    std::vector<std::array<double, 15>> values(probes.size());
    double gap = 0.0;
    for (std::size_t p = 0; p < probes.size(); ++p) {
      double k = 0.0, g = 0.0;
      for (int i = 0; i < 15; ++i) {
        values[p][i] = semigroup(panel.t[i], probes[p]);
        k += panel.wk[i] * values[p][i];
        g += panel.wg[i] * values[p][i];
      }
      gap = std::max(gap, std::abs(k - g));
    }
    if (gap > options.panel_tolerance && depth < options.max_bisections) {
      const double c = 0.5 * (a + b);
      accept(a, c, depth + 1);
      if (!done) accept(c, b, depth + 1);
      return;
    }
    for (int i = 0; i < 15; ++i) {
      u.t_nodes_.push_back(panel.t[i]);
      u.t_weights_.push_back(panel.wk[i]);
      double biggest = 0.0;
      for (std::size_t p = 0; p < probes.size(); ++p) biggest = std::max(biggest, std::abs(values[p][i]));
      small_run = biggest < options.truncation ? small_run + 1 : 0;
    }
    if (small_run >= options.consecutive_small) done = true;
    if (u.t_nodes_.size() > options.max_time_nodes) {
      std::ostringstream msg;
      msg << "corrector time integral did not settle within " << options.max_time_nodes
          << " nodes (is the right-hand side centered?)";
      throw ConvergenceError(msg.str());
    }
  };
  for (double a = 0.0; !done; a += options.panel_length) accept(a, a + options.panel_length, 0);

  double total_weight = 0.0;
  for (double w : u.t_weights_) total_weight += w;
  // Stationarity: E_mu P_t h = E_mu h for every t.
  u.centering_ = -total_weight * h_mean;
  return u;
}

Corrector solve_corrector(const MomentEvaluator& moments, const Vector& x, double eps, int k,
                          const CorrectorOptions& options) {
  if (k < 0 || k >= moments.dim_x()) throw ConfigurationError("corrector coordinate out of range");
  const FrozenOu ou = frozen_ou(moments, x, eps);
  const StandardGaussianRule rule(QuadratureScheme::gauss_hermite(20), moments.dim_y());
  const double bbar = averaged_drift(moments, x, eps, rule)(k);
  const MomentEvaluator* mp = &moments;
  Vector xx = x;
  ScalarField h = [mp, xx, k, bbar](const Vector& y) { return mp->b2(xx, y)(k) - bbar; };
  return solve_poisson(ou, std::move(h), options, k);
}

std::vector<Corrector> solve_correctors(const MomentEvaluator& moments, const Vector& x, double eps,
                                        const CorrectorOptions& options) {
  std::vector<Corrector> out;
  for (int k = 0; k < moments.dim_x(); ++k) out.push_back(solve_corrector(moments, x, eps, k, options));
  return out;
}

// ---------------------------------------------------------------------------
// Covariance rates

Matrix n1_rate(const MomentEvaluator& moments, const Vector& x, double eps, const DeviationOptions& options) {
  const int n = moments.dim_x();
  const int m = moments.dim_y();
  const auto correctors = solve_correctors(moments, x, eps, options.corrector);
  const FrozenOu& ou = correctors.front().ou();
  const GaussianMeasure mu = ou.invariant();
  const StandardGaussianRule rule(QuadratureScheme::gauss_hermite(options.average_order), m);
  auto gradients = [&](const Vector& y) {
    Matrix g(m, n);
    for (int k = 0; k < n; ++k) g.col(k) = correctors[k].grad_y(y);
    return g;
  };
  Matrix rate;
  if (options.n1_mode == CovarianceMode::product_of_averages) {
    const Matrix gbar = integrate_gaussian(mu, rule, gradients).value;
    rate = gbar.transpose() * ou.a1 * gbar;
  } else {
    rate = integrate_gaussian(mu, rule, [&](const Vector& y) {
             const Matrix g = gradients(y);
             return Matrix(g.transpose() * ou.a1 * g);
           }).value;
  }
  return 0.5 * (rate + rate.transpose());
}

Matrix n2_rate(const MomentEvaluator& moments, const Vector& x, double eps, const DeviationOptions& options) {
  const GaussianMeasure mu = invariant_measure(moments, x, eps);
  const StandardGaussianRule rule(QuadratureScheme::gauss_hermite(options.average_order), moments.dim_y());
  Matrix rate;
  if (options.n2_mode == CovarianceMode::average_of_product) {
    rate = integrate_gaussian(mu, rule, [&](const Vector& y) { return moments.a2(x, y); }).value;
  } else {
    const Matrix sbar = integrate_gaussian(mu, rule, [&](const Vector& y) { return moments.sigma2(x, y); }).value;
    rate = sbar * sbar.transpose();
  }
  return 0.5 * (rate + rate.transpose());
}

Matrix drift_jacobian(const MomentEvaluator& moments, const Vector& x, double eps, const DeviationOptions& options) {
  if (options.closed_form_jacobian) {
    if (auto closed = moments.averaged_b2_jacobian(x, eps)) return *closed;
  }
  const int n = moments.dim_x();
  const StandardGaussianRule rule(QuadratureScheme::gauss_hermite(options.average_order), moments.dim_y());
  const double s = options.jacobian_step * (1.0 + x.norm());
  Matrix jac(n, n);
  Vector z = x;
  for (int j = 0; j < n; ++j) {
    z(j) = x(j) + s;
    const Vector fp = averaged_drift(moments, z, eps, rule);
    z(j) = x(j) - s;
    const Vector fm = averaged_drift(moments, z, eps, rule);
    z(j) = x(j);
    jac.col(j) = (fp - fm) / (2.0 * s);
  }
  return jac;
}

DeviationRates deviation_rates(const MomentEvaluator& moments, const Vector& x, double eps,
                               const DeviationOptions& options) {
  return {drift_jacobian(moments, x, eps, options), n1_rate(moments, x, eps, options),
          n2_rate(moments, x, eps, options)};
}

namespace {

std::vector<Matrix> trapezoid(const Trajectory& path, const std::function<Matrix(const Vector&)>& rate) {
  std::vector<Matrix> out;
  out.reserve(path.size());
  Matrix prev = rate(path.states_x.front());
  out.push_back(Matrix::Zero(prev.rows(), prev.cols()));
  for (std::size_t i = 1; i < path.size(); ++i) {
    const Matrix cur = rate(path.states_x[i]);
    const double dt = path.times[i] - path.times[i - 1];
    out.push_back(Matrix(out.back() + 0.5 * dt * (prev + cur)));
    prev = cur;
  }
  return out;
}

}  // namespace

std::vector<Matrix> n1_covariance(const MomentEvaluator& moments, const Trajectory& averaged, double eps,
                                  const DeviationOptions& options) {
  averaged.validate();
  return trapezoid(averaged, [&](const Vector& x) { return n1_rate(moments, x, eps, options); });
}

std::vector<Matrix> n2_covariance(const MomentEvaluator& moments, const Trajectory& averaged, double eps,
                                  CovarianceMode mode, const DeviationOptions& options) {
  averaged.validate();
  DeviationOptions local = options;
  local.n2_mode = mode;
  return trapezoid(averaged, [&](const Vector& x) { return n2_rate(moments, x, eps, local); });
}

// ---------------------------------------------------------------------------
// Limit process

LimitDeviationPlan build_limit_deviation_plan(const MomentEvaluator& moments, const Trajectory& averaged, double eps,
                                              const DeviationOptions& options) {
  averaged.validate();
  LimitDeviationPlan plan;
  plan.times = averaged.times;
  const std::size_t nodes = averaged.size();
  std::vector<Matrix> r1(nodes), r2(nodes);
  plan.jacobians.resize(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    const DeviationRates r = deviation_rates(moments, averaged.states_x[i], eps, options);
    plan.jacobians[i] = r.jacobian;
    r1[i] = r.n1;
    r2[i] = r.n2;
  }
  const int n = moments.dim_x();
  plan.n1.assign(1, Matrix::Zero(n, n));
  plan.n2.assign(1, Matrix::Zero(n, n));
  for (std::size_t i = 1; i < nodes; ++i) {
    const double dt = plan.times[i] - plan.times[i - 1];
    const Matrix d1 = 0.5 * dt * (r1[i - 1] + r1[i]);
    const Matrix d2 = 0.5 * dt * (r2[i - 1] + r2[i]);
    plan.n1.push_back(Matrix(plan.n1.back() + d1));
    plan.n2.push_back(Matrix(plan.n2.back() + d2));
    const Matrix inc = d1 + d2;
    try {
      plan.increment_factors.push_back(psd_factor(inc));
    } catch (const NotPsdError& e) {
      std::ostringstream msg;
      msg << "limit deviation: covariance increment at t = " << plan.times[i] << " is not PSD (eigenvalue "
          << e.eigenvalue() << ")";
      throw NotPsdError(msg.str(), e.eigenvalue());
    }
  }
  return plan;
}

Trajectory simulate_limit_deviation(const LimitDeviationPlan& plan, RandomStream& rng, std::size_t record_stride) {
  if (record_stride == 0) throw ConfigurationError("record_stride must be >= 1");
  if (plan.times.empty()) throw ConfigurationError("limit deviation plan is empty");
  const int n = static_cast<int>(plan.jacobians.front().rows());
  Trajectory out;
  out.meta.scheme = "limit_deviation_euler";
  out.record_stride = record_stride;
  if (plan.times.size() > 1) out.meta.dt = plan.times[1] - plan.times[0];
  Vector z = Vector::Zero(n);
  Vector xi(n);
  out.times.push_back(plan.times.front());
  out.states_x.push_back(z);
  const std::size_t steps = plan.steps();
  for (std::size_t k = 0; k < steps; ++k) {
    const double dt = plan.times[k + 1] - plan.times[k];
    rng.normals(xi, n);
    Vector next = z + dt * (plan.jacobians[k] * z);
    next.noalias() += plan.increment_factors[k] * xi;
    z = next;
    if ((k + 1) % record_stride == 0 || k + 1 == steps) {
      out.times.push_back(plan.times[k + 1]);
      out.states_x.push_back(z);
    }
  }
  return out;
}

Trajectory simulate_limit_deviation(const MomentEvaluator& moments, const Trajectory& averaged, double eps,
                                    RandomStream& rng, const DeviationOptions& options) {
  const LimitDeviationPlan plan = build_limit_deviation_plan(moments, averaged, eps, options);
  Trajectory out = simulate_limit_deviation(plan, rng);
  out.meta.epsilon = eps;
  return out;
}

std::vector<Matrix> limit_covariance(const LimitDeviationPlan& plan) {
  if (plan.times.empty()) throw ConfigurationError("limit deviation plan is empty");
  const int n = static_cast<int>(plan.jacobians.front().rows());
  std::vector<Matrix> out;
  out.reserve(plan.times.size());
  Matrix p = Matrix::Zero(n, n);
  out.push_back(p);
  for (std::size_t k = 0; k + 1 < plan.times.size(); ++k) {
    const double dt = plan.times[k + 1] - plan.times[k];
    const Matrix rate = ((plan.n1[k + 1] - plan.n1[k]) + (plan.n2[k + 1] - plan.n2[k])) / dt;
    const Matrix& m0 = plan.jacobians[k];
    const Matrix& m1 = plan.jacobians[k + 1];
    const Matrix mh = 0.5 * (m0 + m1);
    auto f = [&](const Matrix& mm, const Matrix& pp) { return Matrix(mm * pp + pp * mm.transpose() + rate); };
    const Matrix k1 = f(m0, p);
    const Matrix k2 = f(mh, Matrix(p + 0.5 * dt * k1));
    const Matrix k3 = f(mh, Matrix(p + 0.5 * dt * k2));
    const Matrix k4 = f(m1, Matrix(p + dt * k3));
    p += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    p = 0.5 * (p + p.transpose());
    out.push_back(p);
  }
  return out;
}

Trajectory rescaled_deviation(const Trajectory& coupled, const Trajectory& averaged, double eta) {
  if (!(eta > 0.0)) throw DomainError("rescaled_deviation: eta must be > 0");
  if (coupled.size() != averaged.size()) throw AlignmentError("rescaled_deviation: grids have different lengths");
  for (std::size_t i = 0; i < coupled.size(); ++i) {
    const double a = coupled.times[i], b = averaged.times[i];
    if (std::abs(a - b) > 1e-9 * std::max(1.0, std::abs(a))) {
      std::ostringstream msg;
      msg << "rescaled_deviation: time grids differ at row " << i << " (" << a << " vs " << b << ")";
      throw AlignmentError(msg.str());
    }
  }
  Trajectory z;
  z.times = coupled.times;
  z.meta = coupled.meta;
  z.meta.scheme = "rescaled_deviation";
  z.record_stride = coupled.record_stride;
  z.states_x.reserve(coupled.size());
  const double scale = 1.0 / std::sqrt(eta);
  for (std::size_t i = 0; i < coupled.size(); ++i) {
    z.states_x.push_back(Vector((coupled.states_x[i] - averaged.states_x[i]) * scale));
  }
  return z;
}

// ---------------------------------------------------------------------------
// Statistics

void DeviationAccumulator::add(const Trajectory& path) {
  if (count_ == 0) {
    times_ = path.times;
    const int n = path.dim_x();
    sum_.assign(path.size(), Vector::Zero(n));
    sum_sq_.assign(path.size(), Matrix::Zero(n, n));
  } else if (path.times != times_) {
    throw AlignmentError("DeviationAccumulator: path grid differs from the first path");
  }
  for (std::size_t i = 0; i < path.size(); ++i) {
    const Vector& z = path.states_x[i];
    sum_[i] += z;
    sum_sq_[i].noalias() += z * z.transpose();
  }
  ++count_;
}

void DeviationAccumulator::merge(const DeviationAccumulator& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  if (other.times_ != times_) throw AlignmentError("DeviationAccumulator: merging different grids");
  for (std::size_t i = 0; i < times_.size(); ++i) {
    sum_[i] += other.sum_[i];
    sum_sq_[i] += other.sum_sq_[i];
  }
  count_ += other.count_;
}

DeviationStats DeviationAccumulator::finish(std::uint64_t seed) const {
  DeviationStats s;
  s.times = times_;
  s.replicas = count_;
  s.seed = seed;
  const double n = static_cast<double>(count_);
  for (std::size_t i = 0; i < times_.size(); ++i) {
    const Vector mean = sum_[i] / n;
    Matrix cov = Matrix::Zero(mean.size(), mean.size());
    if (count_ > 1) cov = (sum_sq_[i] - n * mean * mean.transpose()) / (n - 1.0);
    cov = 0.5 * (cov + cov.transpose());
    s.mean.push_back(mean);
    s.covariance.push_back(cov);
  }
  return s;
}

std::string DeviationStats::to_json() const {
  nlohmann::ordered_json j;
  j["times"] = times;
  auto& means = j["mean"] = nlohmann::ordered_json::array();
  for (const auto& m : mean) {
    std::vector<double> v(m.data(), m.data() + m.size());
    means.push_back(v);
  }
  auto& covs = j["covariance"] = nlohmann::ordered_json::array();
  for (const auto& c : covariance) {
    auto rows = nlohmann::ordered_json::array();
    for (int r = 0; r < c.rows(); ++r) {
      std::vector<double> row(c.cols());
      for (int k = 0; k < c.cols(); ++k) row[k] = c(r, k);
      rows.push_back(row);
    }
    covs.push_back(rows);
  }
  j["replicas"] = replicas;
  j["seed"] = seed;
  return j.dump(2);
}

DeviationStats DeviationStats::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  DeviationStats s;
  s.times = j.at("times").get<std::vector<double>>();
  for (const auto& m : j.at("mean")) {
    const auto v = m.get<std::vector<double>>();
    Vector out(static_cast<int>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<int>(i)) = v[i];
    s.mean.push_back(out);
  }
  for (const auto& c : j.at("covariance")) {
    const auto rows = c.get<std::vector<std::vector<double>>>();
    const int n = static_cast<int>(rows.size());
    Matrix out(n, n);
    for (int r = 0; r < n; ++r)
      for (int k = 0; k < n; ++k) out(r, k) = rows[r].at(k);
    s.covariance.push_back(out);
  }
  s.replicas = j.at("replicas").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

std::string to_string(CorrectorMethod method) {
  return method == CorrectorMethod::closed_form ? "closed_form" : "semigroup_quadrature";
}

std::string to_string(CovarianceMode mode) {
  return mode == CovarianceMode::average_of_product ? "average_of_product" : "product_of_averages";
}

CovarianceMode covariance_mode_from_string(const std::string& name) {
  if (name == "average_of_product") return CovarianceMode::average_of_product;
  if (name == "product_of_averages") return CovarianceMode::product_of_averages;
  throw ConfigurationError("covariance mode must be \"average_of_product\" or \"product_of_averages\" (got \"" +
                           name + "\")");
}

}  // namespace pcgf
