// Acceptance run: one [PASS]/[FAIL] line per criterion, nonzero exit on any
// failure. Each criterion also has a wall-time budget.

#include "config.hpp"
#include "dispatch.hpp"
#include "pcgf/deviation.hpp"
#include "pcgf/errors.hpp"
#include "pcgf/experiments.hpp"
#include "pcgf/gaussian.hpp"
#include "pcgf/quadratic_problem.hpp"

#include <Eigen/SVD>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace pcgf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

int failures = 0;

void run(int id, const std::string& name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs > budget_seconds) {
    o.pass = false;
    o.detail += "; over budget of " + fmt(budget_seconds) + " s";
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << " " << name << ": " << o.detail << " (" << fmt(secs)
            << " s)" << std::endl;
}

Outcome ou_stationarity() {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const Vector x = vec2(0.3, -0.4);
  const double eps = 0.1;
  const GaussianMeasure mu = invariant_measure(moments, x, eps);
  const int n = 100000;
  Vector sum = Vector::Zero(2);
  Matrix sum_sq = Matrix::Zero(2, 2);
  RandomStream rng(2024);
  const Vector y0 = vec2(3.0, -3.0);
  for (int i = 0; i < n; ++i) {
    const Vector y = ou_exact_step(moments, x, eps, y0, 20.0, rng);
    sum += y;
    sum_sq += y * y.transpose();
  }
  const Vector mean = sum / n;
  const Matrix cov = (sum_sq - n * mean * mean.transpose()) / (n - 1);
  const Matrix& s = mu.covariance;
  double worst = 0.0;
  for (int i = 0; i < 2; ++i) {
    worst = std::max(worst, std::abs(mean(i) - mu.mean(i)) / std::sqrt(s(i, i) / n));
    for (int j = 0; j < 2; ++j) {
      const double se = std::sqrt((s(i, i) * s(j, j) + s(i, j) * s(i, j)) / n);
      worst = std::max(worst, std::abs(cov(i, j) - s(i, j)) / se);
    }
  }
  return {worst <= 4.0, "largest deviation " + fmt(worst) + " SE (limit 4)"};
}

Outcome bias_law() {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const Vector x = vec2(0.5, 0.5);
  const Vector center = moments.b1(x);
  std::vector<double> grid;
  for (int k = 2; k <= 10; ++k) grid.push_back(std::ldexp(1.0, -k));
  const SweepResult r =
      bias_sweep(moments, [&](const Vector&, const Vector& y) { return (y - center).norm(); }, x, grid);
  if (!r.fit) return {false, "no fit: " + r.fit_note};
  return {std::abs(r.fit->slope - 0.5) <= 0.02, "slope " + fmt(r.fit->slope) + " (target 0.5 +- 0.02)"};
}

Outcome lipschitz() {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const Matrix a = reference_quadratic_spec().a_mean;
  const double lip = Eigen::JacobiSVD<Matrix>(a).singularValues()(0);
  const Vector c = problem->target_mean();
  const auto q = [&](const Vector&, const Vector& y) { return (y - c).norm(); };
  const StandardGaussianRule rule(QuadratureScheme::gauss_hermite(20), 2);
  RandomStream rng(77);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Vector x1 = vec2(4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0);
    Vector x2 = vec2(4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0);
    const double d = (x1 - x2).norm();
    if (d == 0.0) continue;
    const double q1 = average_under_invariant(q, moments, x1, 0.1, rule).value;
    const double q2 = average_under_invariant(q, moments, x2, 0.1, rule).value;
    worst = std::max(worst, std::abs(q1 - q2) / d);
  }
  return {worst <= 2.0 * lip, "max quotient " + fmt(worst) + " vs 2 * " + fmt(lip)};
}

Outcome averaging_rate() {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  SweepConfig c;
  c.x0 = vec2(0.0, 0.0);
  c.run = {2000, 1, 0};
  std::vector<double> grid;
  for (double e : {2.0, 2.5, 3.0, 3.5, 4.0}) grid.push_back(std::pow(10.0, -e));
  const SweepResult r = averaging_error_sweep(moments, 0.5, grid, c);
  bool decreasing = true;
  for (std::size_t i = 0; i + 1 < r.points.size(); ++i)
    decreasing = decreasing && r.points[i].error_mean > r.points[i + 1].error_mean;
  if (!r.fit) return {false, "no fit: " + r.fit_note};
  const bool in_band = r.fit->slope >= 0.7 && r.fit->slope <= 1.3;
  return {decreasing && in_band,
          "slope " + fmt(r.fit->slope) + " (band [0.7, 1.3]), decreasing " + (decreasing ? "yes" : "no")};
}

Outcome corrector_checks() {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const double eps = 0.4;
  const Vector x = vec2(0.3, -0.2);
  const FrozenOu ou = frozen_ou(moments, x, eps);
  std::vector<Vector> grid;
  for (double a = -2.0; a <= 2.0 + 1e-12; a += 0.5)
    for (double b = -2.0; b <= 2.0 + 1e-12; b += 0.5) grid.push_back(ou.mean + vec2(a, b));

  Matrix q(2, 2);
  q << 1.0, 0.4, 0.4, 2.0;
  const double shift = 0.5 * eps * (ou.a1 * q).trace();
  const ScalarField linear = [&](const Vector& y) { return 0.7 * (y(0) - ou.mean(0)) - (y(1) - ou.mean(1)); };
  const ScalarField quadratic = [&](const Vector& y) {
    const Vector e = y - ou.mean;
    return 0.3 * e(0) + e.dot(q * e) - shift;
  };
  CorrectorOptions closed_opt, quad_opt;
  closed_opt.method = CorrectorMethod::closed_form;
  quad_opt.method = CorrectorMethod::semigroup_quadrature;
  const StandardGaussianRule rule(QuadratureScheme::gauss_hermite(12), 2);
  double gap = 0.0, residual = 0.0, centering = 0.0;
  for (const ScalarField& h : {linear, quadratic}) {
    const Corrector closed = solve_poisson(ou, h, closed_opt);
    const Corrector quad = solve_poisson(ou, h, quad_opt);
    for (const Vector& y : grid) {
      gap = std::max(gap, std::abs(closed(y) - quad(y)));
      residual = std::max(residual, std::abs(ou_generator_apply(ou, quad, y) - h(y)));
    }
    centering = std::max(centering, std::abs(integrate_gaussian(ou.invariant(), rule, quad).value));
  }
  const bool ok = gap <= 1e-6 && residual <= 1e-4 && centering <= 1e-8;
  return {ok, "sup gap " + fmt(gap) + ", generator residual " + fmt(residual) + ", centering " + fmt(centering)};
}

Outcome normal_deviations() {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  DeviationTestConfig c;
  c.x0 = vec2(0.0, 0.0);
  c.run = {5000, 0, 0};
  const DeviationReport r =
      deviation_convergence_test(moments, 0.25, {1e-2, std::pow(10.0, -2.5), 1e-3}, c);
  const DeviationPoint& last = r.points.back();
  const bool ok = last.relative_gap <= 0.25 && last.cv_gap <= 0.25 && r.gap_decreasing;
  std::string trend;
  for (const auto& p : r.points) trend += (trend.empty() ? "" : ", ") + fmt(p.smoothed_gap);
  return {ok, "gap at eta=1e-3 " + fmt(last.relative_gap) + " (control variate " + fmt(last.cv_gap) +
                  "), smoothed trend [" + trend + "] decreasing " + (r.gap_decreasing ? "yes" : "no")};
}

Outcome scgd_effectiveness() {
  const auto problem = reference_quadratic_problem();
  ScgdCompareConfig c;
  c.x0 = vec2(0.0, 0.0);
  const ScgdCompareReport r = scgd_vs_flow(*problem, *problem->minimizer(), c);
  const bool scgd_hit = r.scgd_hit.mean_fraction_hit == 1.0;
  const bool sgd_hit = r.sgd_hit.mean_fraction_hit == 1.0;
  const double ratio = r.scgd_hit.mean_time / r.sgd_hit.mean_time;
  const bool times_agree = ratio >= 0.5 && ratio <= 2.0;
  const bool gap_ok = r.gap_scgd_coupled <= 5.0 * c.eta;
  return {scgd_hit && sgd_hit && times_agree && gap_ok,
          "hit fractions " + fmt(r.scgd_hit.mean_fraction_hit) + "/" + fmt(r.sgd_hit.mean_fraction_hit) +
              ", hitting times " + fmt(r.scgd_hit.mean_time) + " vs " + fmt(r.sgd_hit.mean_time) + ", mean-path gap " +
              fmt(r.gap_scgd_coupled) + " (bound " + fmt(5.0 * c.eta) + ")"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "pcgf_acceptance_determinism";
  fs::remove_all(root);
  const std::vector<std::string> configs{
      R"({"experiment": "averaging", "eta_grid": [0.01, 0.005, 0.0025], "replicas": 64, "seed": 5})",
      R"({"experiment": "khasminskii", "eta_grid": [0.01, 0.005, 0.0025], "replicas": 64, "seed": 5})",
      R"({"experiment": "deviation", "eta_grid": [0.01, 0.005], "replicas": 500, "seed": 5})",
      R"({"experiment": "scgd-compare", "eta": 0.01, "num_iters": 1000, "replicas": 64, "seed": 5})",
      R"({"experiment": "bias", "seed": 5})",
      R"({"experiment": "simulate", "replicas": 3, "horizon": 0.2, "seed": 5})",
  };
  std::size_t compared = 0;
  std::string mismatch;
  for (const std::string& text : configs) {
    cli::RunConfig c = cli::parse_config(text);
    std::vector<fs::path> dirs;
    for (std::size_t threads : {1, 2, 2}) {
      c.output_dir = (root / (c.experiment + "_" + std::to_string(dirs.size()))).string();
      if (cli::dispatch(c, {threads, true}) != cli::kExitOk) return {false, c.experiment + " run failed"};
      dirs.emplace_back(c.output_dir);
    }
    for (const std::string& name : cli::artifact_names(c)) {
      const std::string ref = slurp(dirs[0] / name);
      for (std::size_t i = 1; i < dirs.size(); ++i)
        if (slurp(dirs[i] / name) != ref) mismatch += " " + c.experiment + "/" + name;
      ++compared;
    }
    auto manifest = [](const fs::path& d) {
      auto m = nlohmann::json::parse(slurp(d / "manifest.json"));
      m.erase("wall_time_seconds");
      m["config"].erase("output_dir");
      return m;
    };
    for (std::size_t i = 1; i < dirs.size(); ++i)
      if (manifest(dirs[i]) != manifest(dirs[0])) mismatch += " " + c.experiment + "/manifest.json";
  }
  fs::remove_all(root);
  if (!mismatch.empty()) return {false, "differing outputs:" + mismatch};
  return {true, std::to_string(compared) + " artifacts identical across 3 runs (1, 2, 2 threads)"};
}

}  // namespace

int main() {
  run(1, "OU stationarity", 10, ou_stationarity);
  run(2, "sqrt(eps) bias law", 30, bias_law);
  run(3, "averaging operator Lipschitz bound", 30, lipschitz);
  run(4, "averaging principle rate", 600, averaging_rate);
  run(5, "corrector correctness", 60, corrector_checks);
  run(6, "normal deviation convergence", 600, normal_deviations);
  run(7, "SCGD effectiveness", 300, scgd_effectiveness);
  run(8, "determinism", 60, determinism);
  return failures == 0 ? 0 : 1;
}
