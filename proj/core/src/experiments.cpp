#include "pcgf/experiments.hpp"

#include "pcgf/errors.hpp"
#include "pcgf/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace pcgf {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json parse_echo(const std::string& text) {
  auto j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) return ordered_json(text);
  return j;
}

ordered_json vector_json(const Vector& v) {
  auto a = ordered_json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

ordered_json matrix_json(const Matrix& m) {
  auto rows = ordered_json::array();
  for (int r = 0; r < m.rows(); ++r) {
    auto row = ordered_json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

void require_decreasing(const std::vector<double>& grid, const char* name) {
  if (grid.empty()) throw ConfigurationError(std::string(name) + " grid must be nonempty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0)) throw ConfigurationError(std::string(name) + " grid values must be > 0");
    if (i > 0 && !(grid[i] < grid[i - 1])) {
      throw ConfigurationError(std::string(name) + " grid must be sorted in decreasing order");
    }
  }
}

void require_monotone(const std::vector<double>& grid, const char* name) {
  if (grid.empty()) throw ConfigurationError(std::string(name) + " grid must be nonempty");
  bool up = true, down = true;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0)) throw ConfigurationError(std::string(name) + " grid values must be > 0");
    if (i > 0) {
      up = up && grid[i] > grid[i - 1];
      down = down && grid[i] < grid[i - 1];
    }
  }
  if (!up && !down) throw ConfigurationError(std::string(name) + " grid must be strictly monotone");
}

void check_divergence(std::size_t divergent, std::size_t total, double limit, const char* who, double eta) {
  if (static_cast<double>(divergent) > limit * static_cast<double>(total)) {
    std::ostringstream msg;
    msg << who << ": " << divergent << " of " << total << " replicas diverged at eta = " << eta
        << " (limit " << limit * 100.0 << "%)";
    throw Error(msg.str());
  }
}

Vector fill_y0(const MomentEvaluator& moments, const Vector& x0, const std::optional<Vector>& y0) {
  return y0 ? *y0 : moments.b1(x0);
}

}  // namespace

// ---------------------------------------------------------------------------

PowerLawFit fit_power_law(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw DomainError("fit_power_law: xs and ys differ in length");
  if (xs.size() < 3) throw DomainError("fit_power_law: need at least 3 points");
  const std::size_t n = xs.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw DomainError("fit_power_law: values must be positive");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (sxx == 0.0) throw DomainError("fit_power_law: xs must not all be equal");
  PowerLawFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  for (std::size_t i = 0; i < n; ++i) {
    fit.max_residual = std::max(fit.max_residual, std::abs(ly[i] - (fit.intercept + fit.slope * lx[i])));
  }
  fit.reliable = fit.max_residual <= 0.5;
  return fit;
}

void SweepResult::refit() {
  std::vector<double> xs, ys;
  for (const auto& p : points) {
    if (!p.flagged && p.error_mean > 0.0) {
      xs.push_back(p.param);
      ys.push_back(p.error_mean);
    }
  }
  fit.reset();
  fit_note.clear();
  if (xs.size() < 3) {
    fit_note = "fewer than 3 unflagged points with positive error";
    return;
  }
  fit = fit_power_law(xs, ys);
  if (!fit->reliable) fit_note = "max residual above 0.5 in log units: fit unreliable";
}

std::string SweepResult::to_csv() const {
  std::ostringstream out;
  out << "param,error_mean,error_se,replicas,flagged\n";
  for (const auto& p : points) {
    out << format_double(p.param) << ',' << format_double(p.error_mean) << ',' << format_double(p.error_se) << ','
        << p.replicas << ',' << (p.flagged ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string SweepResult::to_json() const {
  ordered_json j;
  j["experiment"] = experiment;
  j["parameter"] = parameter;
  j["seed"] = seed;
  auto pts = ordered_json::array();
  for (const auto& p : points) {
    ordered_json q;
    q["param"] = p.param;
    q["error_mean"] = p.error_mean;
    q["error_se"] = p.error_se;
    q["replicas"] = p.replicas;
    q["flagged"] = p.flagged;
    q["divergent"] = p.divergent;
    q["floor"] = p.floor;
    pts.push_back(q);
  }
  j["points"] = pts;
  if (fit) {
    j["fit"] = {{"slope", fit->slope},
                {"intercept", fit->intercept},
                {"max_residual", fit->max_residual},
                {"reliable", fit->reliable}};
  } else {
    j["fit"] = nullptr;
  }
  if (!fit_note.empty()) j["fit_note"] = fit_note;
  j["config"] = parse_echo(config_json);
  return j.dump(2) + "\n";
}

std::string SweepResult::to_svg() const {
  constexpr double W = 520, H = 380, L = 70, R = 20, T = 30, B = 50;
  std::vector<const SweepPoint*> shown;
  for (const auto& p : points)
    if (p.param > 0 && p.error_mean > 0) shown.push_back(&p);
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
    << experiment << "</text>\n";
  if (shown.empty()) {
    s << "</svg>\n";
    return s.str();
  }
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto* p : shown) {
    x0 = std::min(x0, std::log10(p->param));
    x1 = std::max(x1, std::log10(p->param));
    y0 = std::min(y0, std::log10(p->error_mean));
    y1 = std::max(y1, std::log10(p->error_mean));
  }
  if (x1 - x0 < 1e-9) { x0 -= 0.5; x1 += 0.5; }
  if (y1 - y0 < 1e-9) { y0 -= 0.5; y1 += 0.5; }
  const double px = 0.05 * (x1 - x0), py = 0.08 * (y1 - y0);
  x0 -= px; x1 += px; y0 -= py; y1 += py;
  auto sx = [&](double lx) { return L + (lx - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double ly) { return H - B - (ly - y0) / (y1 - y0) * (H - T - B); };
  s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">log10 " << parameter << "</text>\n";
  s << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">log10 error</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double lx = x0 + (x1 - x0) * k / 4.0;
    const double ly = y0 + (y1 - y0) * k / 4.0;
    s << "<text x=\"" << fmt(sx(lx)) << "\" y=\"" << H - B + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(lx) << "</text>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << fmt(sy(ly) + 3)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(ly) << "</text>\n";
  }
  if (fit) {
    const double a = fit->slope, c = fit->intercept / std::log(10.0);
    s << "<line x1=\"" << fmt(sx(x0)) << "\" y1=\"" << fmt(sy(c + a * x0)) << "\" x2=\"" << fmt(sx(x1))
      << "\" y2=\"" << fmt(sy(c + a * x1)) << "\" stroke=\"#c03030\" stroke-dasharray=\"5,3\"/>\n";
    s << "<text x=\"" << W - R - 6 << "\" y=\"" << T + 16
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#c03030\">slope "
      << fmt(fit->slope) << "</text>\n";
  }
  for (const auto* p : shown) {
    s << "<circle cx=\"" << fmt(sx(std::log10(p->param))) << "\" cy=\"" << fmt(sy(std::log10(p->error_mean)))
      << "\" r=\"4\" " << (p->flagged ? "fill=\"white\" stroke=\"#3050c0\"" : "fill=\"#3050c0\"") << "/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// ---------------------------------------------------------------------------

void ErrorAccumulator::merge(const ErrorAccumulator& other) {
  if (sum_.size() != other.sum_.size()) throw AlignmentError("ErrorAccumulator: record counts differ");
  for (std::size_t i = 0; i < sum_.size(); ++i) {
    sum_[i] += other.sum_[i];
    sum_sq_[i] += other.sum_sq_[i];
  }
  count_ += other.count_;
  divergent_ += other.divergent_;
}

double ErrorAccumulator::mean(std::size_t record) const {
  return count_ == 0 ? 0.0 : sum_[record] / static_cast<double>(count_);
}

double ErrorAccumulator::standard_error(std::size_t record) const {
  if (count_ < 2) return 0.0;
  const double n = static_cast<double>(count_);
  const double m = sum_[record] / n;
  const double var = std::max(0.0, (sum_sq_[record] - n * m * m) / (n - 1.0));
  return std::sqrt(var / n);
}

std::size_t ErrorAccumulator::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < sum_.size(); ++i)
    if (sum_[i] > sum_[best]) best = i;
  return best;
}

double sweep_dt(double horizon, double eps, double eta, double stiffness) {
  if (!(horizon > 0.0 && eps > 0.0 && eta > 0.0 && stiffness > 0.0)) {
    throw ConfigurationError("sweep_dt: horizon, epsilon, eta and stiffness must be > 0");
  }
  const double steps = std::ceil(horizon * eps / (stiffness * eta) * (1.0 - 1e-12));
  return horizon / std::max(1.0, steps);
}

// ---------------------------------------------------------------------------

SweepResult averaging_error_sweep(const MomentEvaluator& moments, double eps, const std::vector<double>& eta_grid,
                                  const SweepConfig& config) {
  if (!(eps > 0.0)) throw ConfigurationError("epsilon must be > 0");
  require_decreasing(eta_grid, "eta");
  if (config.run.replicas < 2) throw ConfigurationError("replicas must be >= 2");
  if (config.x0.size() != moments.dim_x()) throw ConfigurationError("x0 has the wrong dimension");

  SweepResult result;
  result.experiment = "averaging";
  result.parameter = "eta";
  result.seed = config.run.seed;
  for (std::size_t g = 0; g < eta_grid.size(); ++g) {
    const double eta = eta_grid[g];
    SimulationConfig sim;
    sim.epsilon = eps;
    sim.eta = eta;
    sim.horizon = config.horizon;
    sim.dt = sweep_dt(config.horizon, eps, eta, config.stiffness);
    sim.record_stride = config.record_stride;
    sim.x0 = config.x0;
    sim.y0 = config.y0;
    validate_fast_timescale(sim, moments.dim_x());
    const Trajectory averaged =
        integrate_averaged_ode(moments, config.x0, eps, config.horizon, sim.dt, config.scheme, config.record_stride);
    const std::size_t records = averaged.size();

    auto body = [&](std::size_t, RandomStream& rng, ErrorAccumulator& acc) {
      Trajectory path;
      try {
        path = simulate_coupled_fast_timescale(moments, sim, rng);
      } catch (const DivergenceError&) {
        acc.count_divergent();
        return;
      }
      for (std::size_t i = 0; i < records; ++i) acc.add(i, (path.states_x[i] - averaged.states_x[i]).squaredNorm());
      acc.finish_replica();
    };
    const ErrorAccumulator acc =
        run_replicas(config.run.replicas, config.run.seed, g, config.run.threads, ErrorAccumulator(records), body);
    check_divergence(acc.divergent(), config.run.replicas, config.max_divergent_fraction, "averaging_error_sweep",
                     eta);

    SweepPoint p;
    p.param = eta;
    const std::size_t best = acc.argmax();
    p.error_mean = acc.mean(best);
    p.error_se = acc.standard_error(best);
    p.replicas = acc.count();
    p.divergent = acc.divergent();
    if (config.detect_floor) {
      SimulationConfig quiet = sim;
      quiet.noise_scale = 0.0;
      RandomStream unused(0);
      const Trajectory det = simulate_coupled_fast_timescale(moments, quiet, unused);
      for (std::size_t i = 0; i < records; ++i) {
        p.floor = std::max(p.floor, (det.states_x[i] - averaged.states_x[i]).squaredNorm());
      }
      p.flagged = p.error_mean <= 3.0 * p.floor;
    }
    result.points.push_back(p);
  }
  result.refit();
  return result;
}

SweepResult bias_sweep(const MomentEvaluator& moments, const AveragedObservable& q, const Vector& x,
                       const std::vector<double>& eps_grid, const QuadratureScheme& scheme) {
  require_monotone(eps_grid, "epsilon");
  if (x.size() != moments.dim_x()) throw ConfigurationError("x has the wrong dimension");
  SweepResult result;
  result.experiment = "bias";
  result.parameter = "epsilon";
  result.seed = scheme.seed;
  const StandardGaussianRule rule(scheme, moments.dim_y());
  const Vector b1 = moments.b1(x);
  const double center = q(x, b1);
  for (double eps : eps_grid) {
    const auto est = average_under_invariant(q, moments, x, eps, rule);
    SweepPoint p;
    p.param = eps;
    p.error_mean = std::abs(est.value - center);
    p.error_se = est.standard_error;
    p.replicas = rule.monte_carlo() ? rule.size() : 0;
    // Round-off floor of the quadrature sum.
    p.floor = 64.0 * 2.220446049250313e-16 * (1.0 + std::abs(center) + std::abs(est.value));
    p.flagged = p.error_mean <= p.floor;
    result.points.push_back(p);
  }
  result.refit();
  return result;
}

// ---------------------------------------------------------------------------

namespace {

struct TerminalAccumulator {
  Vector sum;
  Matrix sum_sq;
  Vector cv_sum;
  Matrix cv_sum_sq;
  std::size_t count = 0;
  std::size_t divergent = 0;

  explicit TerminalAccumulator(int n = 0)
      : sum(Vector::Zero(n)), sum_sq(Matrix::Zero(n, n)), cv_sum(Vector::Zero(n)), cv_sum_sq(Matrix::Zero(n, n)) {}
  void add(const Vector& z, const Vector& z_cv) {
    sum += z;
    sum_sq.noalias() += z * z.transpose();
    cv_sum += z_cv;
    cv_sum_sq.noalias() += z_cv * z_cv.transpose();
    ++count;
  }
  void merge(const TerminalAccumulator& o) {
    sum += o.sum;
    sum_sq += o.sum_sq;
    cv_sum += o.cv_sum;
    cv_sum_sq += o.cv_sum_sq;
    count += o.count;
    divergent += o.divergent;
  }
};

Matrix sample_covariance(const Vector& sum, const Matrix& sum_sq, std::size_t count) {
  const double cnt = static_cast<double>(count);
  const Vector mean = sum / cnt;
  Matrix c = (sum_sq - cnt * mean * mean.transpose()) / (cnt - 1.0);
  return 0.5 * (c + c.transpose());
}

// Linear process on the EM grid, driven by the coupled system's own normals:
//     Zc_{k+1} = (I + dt M_k) Zc_k + sqrt(dt) (F1_k xi1_k + F2_k xi2_k)
// with F1 = -grad_y u Sigma1 and F2 = Sigma2 at (Xbar_k, B1(Xbar_k)). Its
// covariance `exact` follows from the same recursion, so
// S(Z) - S(Zc) + exact estimates Cov Z without bias.
struct ControlVariate {
  double dt = 0.0;
  std::vector<Matrix> step;
  std::vector<Matrix> f1;
  std::vector<Matrix> f2;
  Matrix exact;

  Vector terminal(const NoiseRecord& noise) const {
    const double sdt = std::sqrt(dt);
    Vector z = Vector::Zero(exact.rows());
    for (std::size_t k = 0; k < step.size(); ++k) {
      Vector next = step[k] * z;
      next.noalias() += sdt * (f1[k] * noise.fast[k]);
      next.noalias() += sdt * (f2[k] * noise.slow[k]);
      z = next;
    }
    return z;
  }
};

ControlVariate build_control_variate(const MomentEvaluator& moments, const Vector& x0, double eps, double horizon,
                                     double dt, const DeviationOptions& options) {
  const Trajectory averaged = integrate_averaged_ode(moments, x0, eps, horizon, dt);
  const int n = moments.dim_x();
  const int m = moments.dim_y();
  ControlVariate cv;
  cv.dt = dt;
  cv.exact = Matrix::Zero(n, n);
  const std::size_t steps = averaged.size() - 1;
  for (std::size_t k = 0; k < steps; ++k) {
    const Vector& x = averaged.states_x[k];
    const Vector b1 = moments.b1(x);
    const Matrix a = Matrix::Identity(n, n) + dt * drift_jacobian(moments, x, eps, options);
    const auto correctors = solve_correctors(moments, x, eps, options.corrector);
    Matrix grad(n, m);
    for (int i = 0; i < n; ++i) grad.row(i) = correctors[static_cast<std::size_t>(i)].grad_y(b1).transpose();
    Matrix f1 = -grad * moments.sigma1(x);
    Matrix f2 = moments.sigma2(x, b1);
    Matrix next = a * cv.exact * a.transpose() + dt * (f1 * f1.transpose() + f2 * f2.transpose());
    cv.exact = 0.5 * (next + next.transpose());
    cv.step.push_back(a);
    cv.f1.push_back(f1);
    cv.f2.push_back(f2);
  }
  return cv;
}

void smooth_gaps(DeviationReport& report) {
  const std::size_t k = report.points.size();
  auto gap = [&](std::size_t j) {
    return report.control_variate ? report.points[j].cv_gap : report.points[j].relative_gap;
  };
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(k - 1, i + 1);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += gap(j);
    report.points[i].smoothed_gap = s / static_cast<double>(hi - lo + 1);
  }
  report.gap_decreasing = k >= 2;
  for (std::size_t i = 1; i < k; ++i) {
    report.gap_decreasing = report.gap_decreasing && report.points[i].smoothed_gap < report.points[i - 1].smoothed_gap;
  }
}

}  // namespace

DeviationReport deviation_convergence_test(const MomentEvaluator& moments, double eps,
                                           const std::vector<double>& eta_grid, const DeviationTestConfig& config) {
  if (config.run.replicas < 500) {
    std::ostringstream msg;
    msg << "deviation_convergence_test needs at least 500 replicas (got " << config.run.replicas << ")";
    throw ConfigurationError(msg.str());
  }
  if (!(eps > 0.0)) throw ConfigurationError("epsilon must be > 0");
  require_decreasing(eta_grid, "eta");
  if (config.x0.size() != moments.dim_x()) throw ConfigurationError("x0 has the wrong dimension");
  const int n = moments.dim_x();

  DeviationReport report;
  report.epsilon = eps;
  report.horizon = config.horizon;
  report.seed = config.run.seed;
  report.control_variate = config.control_variate;

  const Trajectory averaged = integrate_averaged_ode(moments, config.x0, eps, config.horizon, config.limit_dt);
  const LimitDeviationPlan plan = build_limit_deviation_plan(moments, averaged, eps, config.deviation);
  report.limit_covariance = limit_covariance(plan).back();
  report.limit_n1 = plan.n1.back();
  report.limit_n2 = plan.n2.back();
  const Vector x_eps = averaged.states_x.back();
  const double limit_norm = report.limit_covariance.norm();
  if (!(limit_norm > 0.0)) throw ConfigurationError("deviation_convergence_test: limit covariance is zero");

  const double common_dt = sweep_dt(config.horizon, eps, eta_grid.back(), config.stiffness);
  std::optional<ControlVariate> cv;
  for (std::size_t g = 0; g < eta_grid.size(); ++g) {
    const double eta = eta_grid[g];
    SimulationConfig sim;
    sim.epsilon = eps;
    sim.eta = eta;
    sim.horizon = config.horizon;
    sim.dt = config.common_grid ? common_dt : sweep_dt(config.horizon, eps, eta, config.stiffness);
    sim.record_stride = step_count(sim.horizon, sim.dt);
    sim.record_noise = config.control_variate;
    sim.x0 = config.x0;
    sim.y0 = config.y0;
    validate_fast_timescale(sim, n);
    const std::uint64_t key = config.common_grid ? 0 : g;
    const double scale = 1.0 / std::sqrt(eta);
    if (config.control_variate && (!cv || cv->dt != sim.dt)) {
      cv = build_control_variate(moments, config.x0, eps, config.horizon, sim.dt, config.deviation);
    }

    auto body = [&](std::size_t, RandomStream& rng, TerminalAccumulator& acc) {
      Trajectory path;
      try {
        path = simulate_coupled_fast_timescale(moments, sim, rng);
      } catch (const DivergenceError&) {
        ++acc.divergent;
        return;
      }
      const Vector z = (path.states_x.back() - x_eps) * scale;
      acc.add(z, cv ? cv->terminal(*path.noise) : Vector(Vector::Zero(n)));
    };
    const TerminalAccumulator acc =
        run_replicas(config.run.replicas, config.run.seed, key, config.run.threads, TerminalAccumulator(n), body);
    check_divergence(acc.divergent, config.run.replicas, config.max_divergent_fraction,
                     "deviation_convergence_test", eta);

    DeviationPoint p;
    p.eta = eta;
    p.dt = sim.dt;
    p.replicas = acc.count;
    p.divergent = acc.divergent;
    const double cnt = static_cast<double>(acc.count);
    p.mean = acc.sum / cnt;
    p.covariance = sample_covariance(acc.sum, acc.sum_sq, acc.count);
    p.mean_se = (p.covariance.diagonal() / cnt).cwiseMax(0.0).cwiseSqrt();
    p.relative_gap = (p.covariance - report.limit_covariance).norm() / limit_norm;
    if (cv) {
      p.cv_covariance = p.covariance - sample_covariance(acc.cv_sum, acc.cv_sum_sq, acc.count) + cv->exact;
      p.cv_gap = (p.cv_covariance - report.limit_covariance).norm() / limit_norm;
    }
    report.points.push_back(p);
  }
  smooth_gaps(report);
  return report;
}

std::string DeviationReport::to_json() const {
  ordered_json j;
  j["experiment"] = "deviation";
  j["epsilon"] = epsilon;
  j["horizon"] = horizon;
  j["seed"] = seed;
  j["limit_covariance"] = matrix_json(limit_covariance);
  j["limit_n1"] = matrix_json(limit_n1);
  j["limit_n2"] = matrix_json(limit_n2);
  auto pts = ordered_json::array();
  for (const auto& p : points) {
    ordered_json q;
    q["eta"] = p.eta;
    q["dt"] = p.dt;
    q["replicas"] = p.replicas;
    q["divergent"] = p.divergent;
    q["mean"] = vector_json(p.mean);
    q["mean_se"] = vector_json(p.mean_se);
    q["covariance"] = matrix_json(p.covariance);
    q["relative_gap"] = p.relative_gap;
    if (control_variate) {
      q["cv_covariance"] = matrix_json(p.cv_covariance);
      q["cv_gap"] = p.cv_gap;
    }
    q["smoothed_gap"] = p.smoothed_gap;
    pts.push_back(q);
  }
  j["points"] = pts;
  j["trend_estimator"] = control_variate ? "control_variate" : "sample_covariance";
  j["gap_decreasing"] = gap_decreasing;
  j["config"] = parse_echo(config_json);
  return j.dump(2) + "\n";
}

std::string DeviationReport::to_csv() const {
  std::ostringstream out;
  out << "eta,dt,relative_gap,cv_gap,smoothed_gap,replicas\n";
  for (const auto& p : points) {
    out << format_double(p.eta) << ',' << format_double(p.dt) << ',' << format_double(p.relative_gap) << ','
        << (control_variate ? format_double(p.cv_gap) : std::string()) << ',' << format_double(p.smoothed_gap) << ',' << p.replicas << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

namespace {

struct PathAccumulator {
  std::vector<Vector> sum;
  std::vector<Vector> sum_sq;
  std::size_t count = 0;
  std::size_t hits = 0;
  double hit_sum = 0.0;
  double hit_sq = 0.0;

  PathAccumulator(std::size_t records = 0, int n = 0) : sum(records, Vector::Zero(n)), sum_sq(records, Vector::Zero(n)) {}

  template <typename States>
  void add(const States& xs, const Vector& target, double delta, double time_per_record) {
    std::optional<double> hit;
    for (std::size_t i = 0; i < sum.size(); ++i) {
      sum[i] += xs[i];
      sum_sq[i] += xs[i].cwiseProduct(xs[i]);
      if (!hit && (xs[i] - target).norm() < delta) hit = static_cast<double>(i) * time_per_record;
    }
    ++count;
    if (hit) {
      ++hits;
      hit_sum += *hit;
      hit_sq += *hit * *hit;
    }
  }
  void merge(const PathAccumulator& o) {
    for (std::size_t i = 0; i < sum.size(); ++i) {
      sum[i] += o.sum[i];
      sum_sq[i] += o.sum_sq[i];
    }
    count += o.count;
    hits += o.hits;
    hit_sum += o.hit_sum;
    hit_sq += o.hit_sq;
  }
  std::vector<Vector> mean() const {
    std::vector<Vector> out;
    for (const auto& s : sum) out.push_back(s / static_cast<double>(count));
    return out;
  }
  Vector variance_of_mean(std::size_t i) const {
    const double n = static_cast<double>(count);
    const Vector m = sum[i] / n;
    return ((sum_sq[i] - n * m.cwiseProduct(m)) / (n - 1.0)).cwiseMax(0.0) / n;
  }
  HittingStats hitting(const Vector& target, double delta, double time_per_record) const {
    HittingStats h;
    h.hits = hits;
    h.mean_fraction_hit = count == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(count);
    if (hits > 0) {
      const double k = static_cast<double>(hits);
      h.mean_time = hit_sum / k;
      h.se_time = hits > 1 ? std::sqrt(std::max(0.0, (hit_sq - k * h.mean_time * h.mean_time) / (k - 1.0)) / k) : 0.0;
    }
    const auto m = mean();
    for (std::size_t i = 0; i < m.size(); ++i) {
      if ((m[i] - target).norm() < delta) {
        h.mean_path_time = static_cast<double>(i) * time_per_record;
        break;
      }
    }
    return h;
  }
};

ordered_json hitting_json(const HittingStats& h) {
  ordered_json j;
  j["mean_time"] = h.mean_time;
  j["se_time"] = h.se_time;
  j["fraction_hit"] = h.mean_fraction_hit;
  j["hits"] = h.hits;
  j["mean_path_time"] = h.mean_path_time ? ordered_json(*h.mean_path_time) : ordered_json(nullptr);
  return j;
}

}  // namespace

ScgdCompareReport scgd_vs_flow(const CompositionProblem& problem, const Vector& minimizer,
                               const ScgdCompareConfig& config) {
  const MomentEvaluator moments(problem);
  const int n = problem.dim_x();
  if (!(config.epsilon > 0.0 && config.epsilon <= 1.0)) throw ConfigurationError("epsilon must be in (0, 1]");
  if (!(config.eta > 0.0)) throw ConfigurationError("eta must be > 0");
  if (config.record_stride == 0 || config.num_iters == 0 || config.num_iters % config.record_stride != 0) {
    throw ConfigurationError("num_iters must be a positive multiple of record_stride");
  }
  if (config.x0.size() != n || minimizer.size() != n) throw ConfigurationError("x0 / minimizer dimension mismatch");
  if (!(config.delta > 0.0)) throw ConfigurationError("delta must be > 0");
  const Vector y0 = fill_y0(moments, config.x0, config.y0);
  const std::size_t records = config.num_iters / config.record_stride + 1;
  const double time_per_record = config.eta * static_cast<double>(config.record_stride);

  ScgdCompareReport report;
  report.config = config;
  report.minimizer = minimizer;
  report.seed = config.run.seed;
  for (std::size_t i = 0; i < records; ++i) report.iterations.push_back(i * config.record_stride);

  // SCGD.
  auto scgd_body = [&](std::size_t, RandomStream& rng, PathAccumulator& acc) {
    const ScgdPath path = run_scgd(problem, config.epsilon, config.eta, config.num_iters, config.x0, y0, rng,
                                   config.record_stride);
    acc.add(path.x, minimizer, config.delta, time_per_record);
  };
  const PathAccumulator scgd =
      run_replicas(config.run.replicas, config.run.seed, 1, config.run.threads, PathAccumulator(records, n), scgd_body);

  // Coupled SDE in original time: iteration k <-> t = k.
  const std::size_t per_iter = static_cast<std::size_t>(std::max(1.0, std::ceil(config.epsilon / 0.1 - 1e-12)));
  SimulationConfig sim;
  sim.epsilon = config.epsilon;
  sim.eta = config.eta;
  sim.horizon = static_cast<double>(config.num_iters);
  sim.dt = 1.0 / static_cast<double>(per_iter);
  sim.record_stride = per_iter * config.record_stride;
  sim.x0 = config.x0;
  sim.y0 = y0;
  validate_original_timescale(sim, n);
  auto coupled_body = [&](std::size_t, RandomStream& rng, PathAccumulator& acc) {
    const Trajectory path = simulate_coupled_original_timescale(moments, sim, rng);
    acc.add(path.states_x, minimizer, config.delta, time_per_record);
  };
  const PathAccumulator coupled = run_replicas(config.run.replicas, config.run.seed, 2, config.run.threads,
                                               PathAccumulator(records, n), coupled_body);

  // SGD diffusion in fast time, one step per iteration.
  const double horizon_fast = config.eta * static_cast<double>(config.num_iters);
  std::optional<LimitDeviationPlan> plan;
  if (config.sgd_noise == SgdNoise::limit_deviation) {
    const Trajectory averaged = integrate_averaged_ode(moments, config.x0, config.epsilon, horizon_fast, config.eta);
    plan = build_limit_deviation_plan(moments, averaged, config.epsilon);
  }
  auto sgd_body = [&](std::size_t, RandomStream& rng, PathAccumulator& acc) {
    const Trajectory path =
        simulate_sgd_diffusion(moments, config.x0, config.epsilon, config.eta, horizon_fast, config.eta, rng,
                               config.sgd_noise, config.record_stride, plan ? &*plan : nullptr);
    acc.add(path.states_x, minimizer, config.delta, time_per_record);
  };
  const PathAccumulator sgd =
      run_replicas(config.run.replicas, config.run.seed, 3, config.run.threads, PathAccumulator(records, n), sgd_body);

  report.scgd_mean = scgd.mean();
  report.coupled_mean = coupled.mean();
  report.sgd_mean = sgd.mean();
  for (std::size_t i = 0; i < records; ++i) {
    const double gap = (report.scgd_mean[i] - report.coupled_mean[i]).norm();
    if (gap > report.gap_scgd_coupled || i == 0) {
      report.gap_scgd_coupled = gap;
      report.gap_scgd_coupled_se = std::sqrt((scgd.variance_of_mean(i) + coupled.variance_of_mean(i)).sum());
    }
    report.gap_scgd_sgd = std::max(report.gap_scgd_sgd, (report.scgd_mean[i] - report.sgd_mean[i]).norm());
  }
  report.scgd_hit = scgd.hitting(minimizer, config.delta, time_per_record);
  report.coupled_hit = coupled.hitting(minimizer, config.delta, time_per_record);
  report.sgd_hit = sgd.hitting(minimizer, config.delta, time_per_record);
  return report;
}

std::string ScgdCompareReport::to_json() const {
  ordered_json j;
  j["experiment"] = "scgd-compare";
  j["seed"] = seed;
  j["epsilon"] = config.epsilon;
  j["eta"] = config.eta;
  j["num_iters"] = config.num_iters;
  j["replicas"] = config.run.replicas;
  j["delta"] = config.delta;
  j["sgd_noise"] = to_string(config.sgd_noise);
  j["minimizer"] = vector_json(minimizer);
  j["gap_scgd_coupled"] = gap_scgd_coupled;
  j["gap_scgd_coupled_se"] = gap_scgd_coupled_se;
  j["gap_scgd_sgd"] = gap_scgd_sgd;
  j["hitting"] = {{"scgd", hitting_json(scgd_hit)},
                  {"coupled", hitting_json(coupled_hit)},
                  {"sgd_diffusion", hitting_json(sgd_hit)}};
  j["config"] = parse_echo(config_json);
  return j.dump(2) + "\n";
}

std::string ScgdCompareReport::to_csv() const {
  std::ostringstream out;
  const int n = static_cast<int>(minimizer.size());
  out << "iteration,time";
  for (const char* name : {"scgd", "coupled", "sgd"})
    for (int i = 0; i < n; ++i) out << ',' << name << "_x_" << i;
  out << '\n';
  for (std::size_t r = 0; r < iterations.size(); ++r) {
    out << iterations[r] << ',' << format_double(static_cast<double>(iterations[r]) * config.eta);
    for (const auto* series : {&scgd_mean, &coupled_mean, &sgd_mean})
      for (int i = 0; i < n; ++i) out << ',' << format_double((*series)[r](i));
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

namespace {

struct PairAccumulator {
  ErrorAccumulator y;
  ErrorAccumulator x;
  explicit PairAccumulator(std::size_t records = 0) : y(records), x(records) {}
  void merge(const PairAccumulator& o) {
    y.merge(o.y);
    x.merge(o.x);
  }
};

}  // namespace

KhasminskiiReport khasminskii_diagnostic(const MomentEvaluator& moments, double eps,
                                         const std::vector<double>& eta_grid, const KhasminskiiConfig& config) {
  if (!(eps > 0.0)) throw ConfigurationError("epsilon must be > 0");
  require_decreasing(eta_grid, "eta");
  if (eta_grid.front() >= 1.0) throw ConfigurationError("eta grid values must be < 1");
  if (config.run.replicas < 2) throw ConfigurationError("replicas must be >= 2");
  if (config.eval_stride == 0) throw ConfigurationError("eval_stride must be >= 1");
  if (config.x0.size() != moments.dim_x()) throw ConfigurationError("x0 has the wrong dimension");

  KhasminskiiReport report;
  report.y_error.experiment = "khasminskii_y";
  report.x_error.experiment = "khasminskii_x";
  report.y_error.parameter = report.x_error.parameter = "eta";
  report.y_error.seed = report.x_error.seed = config.run.seed;

  for (std::size_t g = 0; g < eta_grid.size(); ++g) {
    const double eta = eta_grid[g];
    SimulationConfig sim;
    sim.epsilon = eps;
    sim.eta = eta;
    sim.horizon = config.horizon;
    sim.dt = sweep_dt(config.horizon, eps, eta, config.stiffness);
    sim.record_stride = 1;
    sim.record_noise = true;
    sim.x0 = config.x0;
    sim.y0 = config.y0;
    validate_fast_timescale(sim, moments.dim_x());
    const double delta = delta_default(eta);
    report.deltas.push_back(static_cast<double>(khasminskii_block_steps(delta, sim.dt, 1)) * sim.dt);
    const std::size_t steps = step_count(sim.horizon, sim.dt);
    const std::size_t records = steps / config.eval_stride + 1;

    auto measure = [&](const Trajectory& path, const Trajectory& pair, PairAccumulator& acc) {
      for (std::size_t i = 0; i < records; ++i) {
        const std::size_t row = i * config.eval_stride;
        acc.y.add(i, (path.states_y[row] - pair.states_y[row]).squaredNorm());
        acc.x.add(i, (path.states_x[row] - pair.states_x[row]).squaredNorm());
      }
      acc.y.finish_replica();
      acc.x.finish_replica();
    };
    auto body = [&](std::size_t, RandomStream& rng, PairAccumulator& acc) {
      try {
        const Trajectory path = simulate_coupled_fast_timescale(moments, sim, rng);
        const Trajectory pair = build_khasminskii_pair(moments, path, delta);
        measure(path, pair, acc);
      } catch (const DivergenceError&) {
        acc.y.count_divergent();
        acc.x.count_divergent();
      }
    };
    const PairAccumulator acc =
        run_replicas(config.run.replicas, config.run.seed, g, config.run.threads, PairAccumulator(records), body);
    check_divergence(acc.y.divergent(), config.run.replicas, config.max_divergent_fraction, "khasminskii_diagnostic",
                     eta);

    // The pair replays the same increments through the same scheme, so with
    // X constant the two paths agree up to round-off. That is the floor.
    double floor_y = 0.0, floor_x = 0.0;
    if (config.detect_floor) {
      SimulationConfig quiet = sim;
      quiet.noise_scale = 0.0;
      quiet.record_noise = false;
      RandomStream unused(0);
      const Trajectory path = simulate_coupled_fast_timescale(moments, quiet, unused);
      double ny = 0.0, nx = 0.0;
      for (std::size_t i = 0; i < path.size(); ++i) {
        ny = std::max(ny, path.states_y[i].norm());
        nx = std::max(nx, path.states_x[i].norm());
      }
      constexpr double unit = 64.0 * 2.220446049250313e-16;
      floor_y = std::pow(unit * (1.0 + ny), 2);
      floor_x = std::pow(unit * (1.0 + nx), 2);
    }
    auto point = [&](const ErrorAccumulator& a, double floor) {
      SweepPoint p;
      p.param = eta;
      const std::size_t best = a.argmax();
      p.error_mean = a.mean(best);
      p.error_se = a.standard_error(best);
      p.replicas = a.count();
      p.divergent = a.divergent();
      p.floor = floor;
      p.flagged = config.detect_floor && p.error_mean <= 3.0 * floor;
      return p;
    };
    report.y_error.points.push_back(point(acc.y, floor_y));
    report.x_error.points.push_back(point(acc.x, floor_x));
  }
  report.y_error.refit();
  report.x_error.refit();
  return report;
}

}  // namespace pcgf
