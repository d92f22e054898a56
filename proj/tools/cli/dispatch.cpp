#include "dispatch.hpp"

#include "pcgf/errors.hpp"
#include "pcgf/experiments.hpp"
#include "pcgf/version.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace pcgf::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& name, const std::string& content) {
    const fs::path path = dir_ / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    written_.push_back(name);
    out << content;
    if (!out) throw Error("write failed for " + path.string());
  }

  void remove_all() {
    std::error_code ec;
    for (const auto& name : written_) fs::remove(dir_ / name, ec);
    written_.clear();
  }

  const std::vector<std::string>& written() const noexcept { return written_; }
  const fs::path& dir() const noexcept { return dir_; }

 private:
  fs::path dir_;
  std::vector<std::string> written_;
};

Vector to_vector(const std::vector<double>& v) {
  Vector out(static_cast<int>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<int>(i)) = v[i];
  return out;
}

Vector or_zeros(const std::optional<std::vector<double>>& v, int n) {
  return v ? to_vector(*v) : Vector(Vector::Zero(n));
}

std::optional<Vector> optional_vector(const std::optional<std::vector<double>>& v) {
  if (!v) return std::nullopt;
  return to_vector(*v);
}

// The config echo stored inside artifacts leaves out the output directory,
// so the same run written to two places yields identical files.
std::string config_echo(const RunConfig& config) {
  json j = json::parse(serialize(config));
  j.erase("output_dir");
  return j.dump();
}

std::string padded(std::size_t r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04zu", r);
  return buf;
}

void run_averaging(const RunConfig& c, const MomentEvaluator& moments, const DispatchOptions& o, ArtifactWriter& w) {
  SweepConfig s;
  s.horizon = c.horizon;
  s.stiffness = c.stiffness;
  s.record_stride = c.record_stride;
  s.x0 = or_zeros(c.x0, moments.dim_x());
  s.y0 = optional_vector(c.y0);
  s.run = {c.replicas, c.seed, o.threads};
  s.detect_floor = c.detect_floor;
  SweepResult r = averaging_error_sweep(moments, c.epsilon, c.eta_grid, s);
  r.config_json = config_echo(c);
  w.write("averaging.csv", r.to_csv());
  w.write("averaging.json", r.to_json());
  if (c.svg) w.write("averaging.svg", r.to_svg());
}

void run_bias(const RunConfig& c, const MomentEvaluator& moments, ArtifactWriter& w) {
  const Vector x = or_zeros(c.x, moments.dim_x());
  const Vector center = moments.b1(x);
  AveragedObservable q;
  if (c.observable == "abs_deviation") {
    q = [center](const Vector&, const Vector& y) { return (y - center).norm(); };
  } else if (c.observable == "linear") {
    q = [](const Vector&, const Vector& y) { return y.sum(); };
  } else {
    q = [center](const Vector&, const Vector& y) { return (y - center).squaredNorm(); };
  }
  const QuadratureScheme scheme = c.quadrature == "gauss_hermite"
                                      ? QuadratureScheme::gauss_hermite(c.quadrature_order)
                                      : QuadratureScheme::monte_carlo(c.quadrature_samples, c.seed);
  SweepResult r = bias_sweep(moments, q, x, c.epsilon_grid, scheme);
  r.seed = c.seed;
  r.config_json = config_echo(c);
  w.write("bias.csv", r.to_csv());
  w.write("bias.json", r.to_json());
  if (c.svg) w.write("bias.svg", r.to_svg());
}

void run_deviation(const RunConfig& c, const MomentEvaluator& moments, const DispatchOptions& o, ArtifactWriter& w) {
  DeviationTestConfig d;
  d.horizon = c.horizon;
  d.stiffness = c.stiffness;
  d.x0 = or_zeros(c.x0, moments.dim_x());
  d.y0 = optional_vector(c.y0);
  d.run = {c.replicas, c.seed, o.threads};
  d.limit_dt = c.limit_dt;
  d.common_grid = c.common_grid;
  d.deviation.n1_mode = covariance_mode_from_string(c.n1_mode);
  d.deviation.n2_mode = covariance_mode_from_string(c.n2_mode);
  DeviationReport r = deviation_convergence_test(moments, c.epsilon, c.eta_grid, d);
  r.config_json = config_echo(c);
  w.write("deviation.csv", r.to_csv());
  w.write("deviation.json", r.to_json());
}

void run_scgd(const RunConfig& c, const QuadraticTestProblem& problem, const DispatchOptions& o, ArtifactWriter& w) {
  ScgdCompareConfig s;
  s.epsilon = c.epsilon;
  s.eta = c.eta;
  s.num_iters = c.num_iters;
  s.x0 = or_zeros(c.x0, problem.dim_x());
  s.y0 = optional_vector(c.y0);
  s.delta = c.delta;
  s.record_stride = c.record_stride;
  s.run = {c.replicas, c.seed, o.threads};
  s.sgd_noise = c.sgd_noise == "limit_deviation" ? SgdNoise::limit_deviation : SgdNoise::constant_factor;
  ScgdCompareReport r = scgd_vs_flow(problem, *problem.minimizer(), s);
  r.config_json = config_echo(c);
  w.write("scgd_compare.csv", r.to_csv());
  w.write("scgd_compare.json", r.to_json());
}

void run_khasminskii(const RunConfig& c, const MomentEvaluator& moments, const DispatchOptions& o,
                     ArtifactWriter& w) {
  KhasminskiiConfig k;
  k.horizon = c.horizon;
  k.stiffness = c.stiffness;
  k.x0 = or_zeros(c.x0, moments.dim_x());
  k.y0 = optional_vector(c.y0);
  k.eval_stride = c.eval_stride;
  k.run = {c.replicas, c.seed, o.threads};
  k.detect_floor = c.detect_floor;
  KhasminskiiReport r = khasminskii_diagnostic(moments, c.epsilon, c.eta_grid, k);
  const std::string echo = config_echo(c);
  r.y_error.config_json = r.x_error.config_json = echo;
  w.write("khasminskii_y.csv", r.y_error.to_csv());
  w.write("khasminskii_x.csv", r.x_error.to_csv());
  json j;
  j["experiment"] = "khasminskii";
  j["seed"] = c.seed;
  j["deltas"] = r.deltas;
  j["y_error"] = json::parse(r.y_error.to_json());
  j["x_error"] = json::parse(r.x_error.to_json());
  j["y_error"].erase("config");
  j["x_error"].erase("config");
  j["config"] = json::parse(echo);
  w.write("khasminskii.json", j.dump(2) + "\n");
  if (c.svg) {
    w.write("khasminskii_y.svg", r.y_error.to_svg());
    w.write("khasminskii_x.svg", r.x_error.to_svg());
  }
}

void run_simulate(const RunConfig& c, const MomentEvaluator& moments, ArtifactWriter& w) {
  const bool fast = c.timescale == "fast";
  SimulationConfig s;
  s.epsilon = c.epsilon;
  s.eta = c.eta;
  s.horizon = fast ? c.horizon : c.horizon / c.eta;
  const double fast_dt = sweep_dt(c.horizon, c.epsilon, c.eta, 0.1);
  s.dt = c.dt ? *c.dt : (fast ? fast_dt : fast_dt / c.eta);
  s.record_stride = c.record_stride;
  s.x0 = or_zeros(c.x0, moments.dim_x());
  s.y0 = optional_vector(c.y0);
  s.record_noise = c.record_noise;
  s.replicas = c.replicas;
  for (std::size_t r = 0; r < c.replicas; ++r) {
    s.seed = derive_seed(c.seed, 0, r);
    RandomStream rng(s.seed);
    const Trajectory t = fast ? simulate_coupled_fast_timescale(moments, s, rng)
                              : simulate_coupled_original_timescale(moments, s, rng);
    std::ostringstream out;
    write_trajectory_csv(t, out);
    w.write(c.replicas == 1 ? "trajectory.csv" : "trajectory_" + padded(r) + ".csv", out.str());
  }
}

void write_manifest(const fs::path& dir, const json& manifest) {
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  out << manifest.dump(2) << "\n";
}

}  // namespace

std::vector<std::string> artifact_names(const RunConfig& c) {
  const auto& e = c.experiment;
  if (e == "averaging" || e == "bias") {
    std::vector<std::string> names = {e + ".csv", e + ".json"};
    if (c.svg) names.push_back(e + ".svg");
    return names;
  }
  if (e == "deviation") return {"deviation.csv", "deviation.json"};
  if (e == "scgd-compare") return {"scgd_compare.csv", "scgd_compare.json"};
  if (e == "khasminskii") {
    std::vector<std::string> names = {"khasminskii_y.csv", "khasminskii_x.csv", "khasminskii.json"};
    if (c.svg) {
      names.push_back("khasminskii_y.svg");
      names.push_back("khasminskii_x.svg");
    }
    return names;
  }
  if (c.replicas == 1) return {"trajectory.csv"};
  std::vector<std::string> names;
  for (std::size_t r = 0; r < c.replicas; ++r) names.push_back("trajectory_" + padded(r) + ".csv");
  return names;
}

void write_failure_manifest(const fs::path& dir, const std::string& kind, const std::string& message) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  json m;
  m["status"] = "failed";
  m["toolkit_version"] = kVersion;
  m["outputs"] = json::array();
  m["error"] = {{"kind", kind}, {"message", message}};
  write_manifest(dir, m);
}

int dispatch(const RunConfig& config, const DispatchOptions& options) {
  const fs::path dir(config.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    std::cerr << R"({"status":"failed","error":{"kind":"io","message":"output_dir is not writable"}})" << "\n";
    return kExitFailed;
  }

  const auto start = std::chrono::steady_clock::now();
  ArtifactWriter writer(dir);
  json manifest;
  manifest["status"] = "running";
  manifest["experiment"] = config.experiment;
  manifest["toolkit_version"] = kVersion;
  manifest["seed"] = config.seed;
  manifest["config"] = json::parse(serialize(config));
  write_manifest(dir, manifest);

  int status = kExitOk;
  try {
    const auto problem = std::make_shared<QuadraticTestProblem>(problem_spec_from_json(config.problem_json));
    const MomentEvaluator moments(*problem);
    const auto& e = config.experiment;
    if (!options.quiet) std::cerr << "pcgf: running " << e << " (seed " << config.seed << ")\n";
    if (e == "averaging") {
      run_averaging(config, moments, options, writer);
    } else if (e == "bias") {
      run_bias(config, moments, writer);
    } else if (e == "deviation") {
      run_deviation(config, moments, options, writer);
    } else if (e == "scgd-compare") {
      run_scgd(config, *problem, options, writer);
    } else if (e == "khasminskii") {
      run_khasminskii(config, moments, options, writer);
    } else if (e == "simulate") {
      run_simulate(config, moments, writer);
    } else {
      throw ConfigurationError("unknown experiment '" + e + "'");
    }
    manifest["status"] = "ok";
    manifest["outputs"] = writer.written();
  } catch (const std::exception& ex) {
    writer.remove_all();
    const std::string kind = dynamic_cast<const ConfigurationError*>(&ex) ? "configuration"
                             : dynamic_cast<const DivergenceError*>(&ex) ? "divergence"
                             : dynamic_cast<const ConvergenceError*>(&ex) ? "convergence"
                                                                            : "runtime";
    manifest["status"] = "failed";
    manifest["outputs"] = json::array();
    manifest["error"] = {{"kind", kind}, {"message", ex.what()}};
    json record = {{"status", "failed"}, {"error", manifest["error"]}};
    std::cerr << record.dump() << "\n";
    status = kExitFailed;
  }
  manifest["wall_time_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(dir, manifest);
  if (!options.quiet && status == kExitOk) {
    std::cerr << "pcgf: wrote " << writer.written().size() << " file(s) to " << dir.string() << "\n";
  }
  return status;
}

}  // namespace pcgf::cli
