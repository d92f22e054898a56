#include "config.hpp"

#include "pcgf/errors.hpp"
#include "pcgf/experiments.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace pcgf::cli {

using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kExperiments = {"averaging", "bias", "deviation", "scgd-compare", "khasminskii",
                                               "simulate"};

// Keys each experiment accepts besides "experiment".
const std::map<std::string, std::set<std::string>>& applicable_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"averaging",
       {"problem", "seed", "output_dir", "svg", "epsilon", "eta_grid", "horizon", "stiffness", "replicas",
        "record_stride", "x0", "y0", "detect_floor"}},
      {"bias",
       {"problem", "seed", "output_dir", "svg", "epsilon_grid", "x", "observable", "quadrature", "quadrature_order",
        "quadrature_samples"}},
      {"deviation",
       {"problem", "seed", "output_dir", "epsilon", "eta_grid", "horizon", "stiffness", "replicas", "x0", "y0",
        "limit_dt", "common_grid", "n1_mode", "n2_mode"}},
      {"scgd-compare",
       {"problem", "seed", "output_dir", "epsilon", "eta", "num_iters", "replicas", "x0", "y0", "delta",
        "record_stride", "sgd_noise"}},
      {"khasminskii",
       {"problem", "seed", "output_dir", "svg", "epsilon", "eta_grid", "horizon", "stiffness", "replicas", "x0",
        "y0", "eval_stride", "detect_floor"}},
      {"simulate",
       {"problem", "seed", "output_dir", "epsilon", "eta", "horizon", "dt", "replicas", "record_stride", "x0", "y0",
        "timescale", "record_noise"}},
  };
  return keys;
}

bool applies(const RunConfig& c, const char* key) { return applicable_keys().at(c.experiment).count(key) > 0; }

[[noreturn]] void fail(const std::string& message) { throw ConfigurationError(message); }

double read_number(const json& j, const std::string& field) {
  if (!j.is_number()) fail(field + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(field + " must be finite");
  return v;
}

std::uint64_t read_unsigned(const json& j, const std::string& field) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
    fail(field + " must be a nonnegative integer");
  }
  return j.get<std::uint64_t>();
}

bool read_bool(const json& j, const std::string& field) {
  if (!j.is_boolean()) fail(field + " must be true or false");
  return j.get<bool>();
}

std::string read_string(const json& j, const std::string& field) {
  if (!j.is_string()) fail(field + " must be a string");
  return j.get<std::string>();
}

std::vector<double> read_vector(const json& j, const std::string& field) {
  if (!j.is_array()) fail(field + " must be an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(read_number(j[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

std::string read_choice(const json& j, const std::string& field, const std::vector<std::string>& choices) {
  const std::string v = read_string(j, field);
  if (std::find(choices.begin(), choices.end(), v) == choices.end()) {
    std::string list;
    for (const auto& c : choices) list += (list.empty() ? "" : ", ") + c;
    fail(field + " must be one of " + list);
  }
  return v;
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) fail("unknown key '" + item.key() + "' in " + where);
  }
}

Vector to_vector(const std::vector<double>& v) {
  Vector out(static_cast<int>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<int>(i)) = v[i];
  return out;
}

Matrix read_matrix(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) fail(field + " must be a nonempty array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  std::vector<std::vector<double>> data;
  for (std::size_t r = 0; r < rows; ++r) {
    data.push_back(read_vector(j[r], field + "[" + std::to_string(r) + "]"));
    if (r == 0) cols = data[0].size();
    if (data[r].size() != cols || cols == 0) fail(field + " rows must be nonempty and of equal length");
  }
  if (rows > static_cast<std::size_t>(kMaxDim) || cols > static_cast<std::size_t>(kMaxDim)) {
    fail(field + " dimensions must be <= " + std::to_string(kMaxDim));
  }
  Matrix m(static_cast<int>(rows), static_cast<int>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<int>(r), static_cast<int>(c)) = data[r][c];
  return m;
}

template <typename T, typename Reader>
std::vector<WeightedAtom<T>> read_atoms(const json& j, const std::string& field, Reader&& reader) {
  if (!j.is_array()) fail(field + " must be an array of {value, weight} objects");
  std::vector<WeightedAtom<T>> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = field + "[" + std::to_string(i) + "]";
    if (!j[i].is_object()) fail(where + " must be an object");
    check_keys(j[i], {"value", "weight"}, where);
    if (!j[i].contains("value") || !j[i].contains("weight")) fail(where + " needs value and weight");
    out.push_back({reader(j[i]["value"], where + ".value"), read_number(j[i]["weight"], where + ".weight")});
  }
  return out;
}

const std::vector<double>& default_eta_grid(const std::string& experiment) {
  static const std::vector<double> averaging = {1e-2, std::pow(10.0, -2.5), 1e-3, std::pow(10.0, -3.5), 1e-4};
  static const std::vector<double> deviation = {1e-2, std::pow(10.0, -2.5), 1e-3};
  static const std::vector<double> khasminskii = {1e-2, std::pow(10.0, -2.5), 1e-3, std::pow(10.0, -3.5)};
  if (experiment == "averaging") return averaging;
  if (experiment == "deviation") return deviation;
  return khasminskii;
}

void apply_defaults(RunConfig& c) {
  const std::string& e = c.experiment;
  if (e == "averaging") {
    c.epsilon = 0.5;
    c.replicas = 2000;
    c.record_stride = 10;
  } else if (e == "bias") {
    for (int k = 2; k <= 10; ++k) c.epsilon_grid.push_back(std::ldexp(1.0, -k));
  } else if (e == "deviation") {
    c.epsilon = 0.25;
    c.replicas = 5000;
  } else if (e == "scgd-compare") {
    c.epsilon = 0.1;
    c.eta = 1e-3;
    c.replicas = 2000;
    c.record_stride = 10;
  } else if (e == "khasminskii") {
    c.epsilon = 0.5;
    c.replicas = 2000;
  } else if (e == "simulate") {
    c.epsilon = 0.5;
    c.eta = 1e-2;
    c.replicas = 1;
    c.record_stride = 1;
  }
  if (e == "averaging" || e == "deviation" || e == "khasminskii") c.eta_grid = default_eta_grid(e);
}

void check_grid(const std::vector<double>& grid, const std::string& field, bool decreasing) {
  if (grid.empty()) fail(field + " must be nonempty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0)) fail(field + " values must be > 0");
    if (i > 0 && decreasing && !(grid[i] < grid[i - 1])) fail(field + " must be sorted in decreasing order");
    if (i > 0 && !decreasing && grid[i] == grid[i - 1]) fail(field + " must not repeat values");
  }
}

std::string read_text_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(what + " '" + path.string() + "' cannot be read");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

const std::vector<std::string>& experiment_ids() { return kExperiments; }

QuadraticFamilySpec problem_spec_from_json(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail("problem must be a JSON object");
  if (!j.contains("family")) fail("problem.family is required");
  const std::string family =
      read_choice(j["family"], "problem.family", {"reference", "reference_jacobian_noise", "quadratic"});
  if (family != "quadratic") {
    check_keys(j, {"family"}, "problem");
    return family == "reference" ? reference_quadratic_spec() : reference_quadratic_spec_with_jacobian_noise();
  }
  check_keys(j, {"family", "a_mean", "a_noise", "b_mean", "b_noise", "targets", "cubic", "clip_radius"}, "problem");
  for (const char* k : {"a_mean", "b_mean", "targets"}) {
    if (!j.contains(k)) fail(std::string("problem.") + k + " is required");
  }
  QuadraticFamilySpec spec;
  spec.a_mean = read_matrix(j["a_mean"], "problem.a_mean");
  spec.b_mean = to_vector(read_vector(j["b_mean"], "problem.b_mean"));
  auto vec = [](const json& v, const std::string& f) { return to_vector(read_vector(v, f)); };
  if (j.contains("a_noise")) spec.a_noise = read_atoms<Matrix>(j["a_noise"], "problem.a_noise", read_matrix);
  if (j.contains("b_noise")) spec.b_noise = read_atoms<Vector>(j["b_noise"], "problem.b_noise", vec);
  spec.targets = read_atoms<Vector>(j["targets"], "problem.targets", vec);
  if (j.contains("cubic")) spec.cubic = read_number(j["cubic"], "problem.cubic");
  if (j.contains("clip_radius") && !j["clip_radius"].is_null()) {
    spec.clip_radius = read_number(j["clip_radius"], "problem.clip_radius");
  }
  // Shapes, weights and the SPD Hessian are checked on construction.
  QuadraticTestProblem check(spec);
  return spec;
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail("config is not valid JSON");
  if (!j.is_object()) fail("config must be a JSON object");
  if (!j.contains("experiment")) fail("experiment is required");
  RunConfig c;
  c.experiment = read_choice(j["experiment"], "experiment", kExperiments);
  apply_defaults(c);

  std::set<std::string> known = {"experiment"};
  for (const auto& [id, keys] : applicable_keys()) known.insert(keys.begin(), keys.end());
  const auto& allowed = applicable_keys().at(c.experiment);
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) fail("unknown key '" + item.key() + "'");
    if (item.key() != "experiment" && !allowed.count(item.key())) {
      fail("key '" + item.key() + "' does not apply to experiment '" + c.experiment + "'");
    }
  }

  json problem = json{{"family", "reference"}};
  if (j.contains("problem")) {
    const json& p = j["problem"];
    if (p.is_string()) {
      c.problem_path = p.get<std::string>();
      std::filesystem::path file(c.problem_path);
      if (file.is_relative()) file = base_dir / file;
      if (!std::filesystem::exists(file)) fail("problem file '" + c.problem_path + "' does not exist");
      problem = json::parse(read_text_file(file, "problem file"), nullptr, false);
      if (problem.is_discarded()) fail("problem file '" + c.problem_path + "' is not valid JSON");
    } else if (p.is_object()) {
      problem = p;
    } else {
      fail("problem must be an object or a file path");
    }
  }
  c.problem_json = problem.dump();

  auto num = [&](const char* key, double& dst) {
    if (j.contains(key)) dst = read_number(j[key], key);
  };
  auto count = [&](const char* key, std::size_t& dst) {
    if (j.contains(key)) dst = static_cast<std::size_t>(read_unsigned(j[key], key));
  };
  auto flag = [&](const char* key, bool& dst) {
    if (j.contains(key)) dst = read_bool(j[key], key);
  };
  auto list = [&](const char* key, std::vector<double>& dst) {
    if (j.contains(key)) dst = read_vector(j[key], key);
  };
  auto opt_list = [&](const char* key, std::optional<std::vector<double>>& dst) {
    if (j.contains(key) && !j[key].is_null()) dst = read_vector(j[key], key);
  };

  if (j.contains("seed")) c.seed = read_unsigned(j["seed"], "seed");
  if (j.contains("output_dir")) c.output_dir = read_string(j["output_dir"], "output_dir");
  num("epsilon", c.epsilon);
  num("eta", c.eta);
  list("eta_grid", c.eta_grid);
  list("epsilon_grid", c.epsilon_grid);
  num("horizon", c.horizon);
  if (j.contains("dt") && !j["dt"].is_null()) c.dt = read_number(j["dt"], "dt");
  num("stiffness", c.stiffness);
  count("replicas", c.replicas);
  count("record_stride", c.record_stride);
  opt_list("x0", c.x0);
  opt_list("y0", c.y0);
  opt_list("x", c.x);
  if (j.contains("timescale")) c.timescale = read_choice(j["timescale"], "timescale", {"fast", "original"});
  flag("record_noise", c.record_noise);
  if (j.contains("observable")) {
    c.observable = read_choice(j["observable"], "observable", {"abs_deviation", "linear", "quadratic"});
  }
  if (j.contains("quadrature")) {
    c.quadrature = read_choice(j["quadrature"], "quadrature", {"gauss_hermite", "monte_carlo"});
  }
  if (j.contains("quadrature_order")) c.quadrature_order = static_cast<int>(read_unsigned(j["quadrature_order"], "quadrature_order"));
  count("quadrature_samples", c.quadrature_samples);
  flag("detect_floor", c.detect_floor);
  count("eval_stride", c.eval_stride);
  num("limit_dt", c.limit_dt);
  flag("common_grid", c.common_grid);
  if (j.contains("n1_mode")) {
    c.n1_mode = read_choice(j["n1_mode"], "n1_mode", {"product_of_averages", "average_of_product"});
  }
  if (j.contains("n2_mode")) {
    c.n2_mode = read_choice(j["n2_mode"], "n2_mode", {"product_of_averages", "average_of_product"});
  }
  count("num_iters", c.num_iters);
  num("delta", c.delta);
  if (j.contains("sgd_noise")) {
    c.sgd_noise = read_choice(j["sgd_noise"], "sgd_noise", {"limit_deviation", "constant_factor"});
  }
  flag("svg", c.svg);

  validate(c);
  return c;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail("config file '" + path.string() + "' does not exist");
  return parse_config(read_text_file(path, "config file"), path.parent_path().empty() ? "." : path.parent_path());
}

void validate(const RunConfig& c) {
  if (std::find(kExperiments.begin(), kExperiments.end(), c.experiment) == kExperiments.end()) {
    fail("experiment must be one of averaging, bias, deviation, scgd-compare, khasminskii, simulate");
  }
  QuadraticFamilySpec spec;
  std::shared_ptr<QuadraticTestProblem> problem;
  try {
    spec = problem_spec_from_json(c.problem_json);
    problem = std::make_shared<QuadraticTestProblem>(spec);
  } catch (const ConfigurationError& e) {
    const std::string what = e.what();
    fail(what.rfind("problem", 0) == 0 ? what : "problem: " + what);
  }
  const auto n = static_cast<std::size_t>(problem->dim_x());
  const auto m = static_cast<std::size_t>(problem->dim_y());

  if (c.output_dir.empty()) fail("output_dir must be nonempty");
  if (applies(c, "epsilon") && !(c.epsilon > 0.0)) fail("epsilon must be > 0");
  if (applies(c, "eta") && !(c.eta > 0.0)) fail("eta must be > 0");
  if (applies(c, "eta_grid")) check_grid(c.eta_grid, "eta_grid", true);
  if (applies(c, "epsilon_grid")) check_grid(c.epsilon_grid, "epsilon_grid", false);
  if (applies(c, "horizon") && !(c.horizon > 0.0)) fail("horizon must be > 0");
  if (applies(c, "stiffness") && !(c.stiffness > 0.0)) fail("stiffness must be > 0");
  if (applies(c, "replicas") && c.replicas < 1) fail("replicas must be >= 1");
  if (applies(c, "record_stride") && c.record_stride < 1) fail("record_stride must be >= 1");
  if (applies(c, "x0") && c.x0 && c.x0->size() != n) fail("x0 must have " + std::to_string(n) + " entries");
  if (applies(c, "y0") && c.y0 && c.y0->size() != m) fail("y0 must have " + std::to_string(m) + " entries");
  if (applies(c, "x") && c.x && c.x->size() != n) fail("x must have " + std::to_string(n) + " entries");

  if (c.experiment == "averaging" || c.experiment == "khasminskii") {
    if (c.replicas < 2) fail("replicas must be >= 2");
  }
  if (c.experiment == "khasminskii") {
    if (c.eval_stride < 1) fail("eval_stride must be >= 1");
    if (!(c.eta_grid.front() < 1.0)) fail("eta_grid values must be < 1");
  }
  if (c.experiment == "bias") {
    if (c.quadrature == "gauss_hermite" && (c.quadrature_order < 1 || c.quadrature_order > 64)) {
      fail("quadrature_order must be in [1, 64]");
    }
    if (c.quadrature == "monte_carlo" && c.quadrature_samples < 2) fail("quadrature_samples must be >= 2");
  }
  if (c.experiment == "deviation") {
    if (c.replicas < 500) fail("replicas must be >= 500 for the deviation test");
    if (!(c.limit_dt > 0.0)) fail("limit_dt must be > 0");
    try {
      step_count(c.horizon, c.limit_dt);
    } catch (const ConfigurationError&) {
      fail("limit_dt must divide horizon");
    }
  }
  if (c.experiment == "scgd-compare") {
    if (c.epsilon > 1.0) fail("epsilon must be <= 1");
    if (c.num_iters < 1) fail("num_iters must be >= 1");
    if (c.num_iters % c.record_stride != 0) fail("num_iters must be a multiple of record_stride");
    if (!(c.delta > 0.0)) fail("delta must be > 0");
    if (!problem->minimizer()) fail("problem: scgd-compare needs a problem with a known minimizer (cubic = 0)");
  }
  if (c.experiment == "simulate") {
    const bool fast = c.timescale == "fast";
    const double horizon = fast ? c.horizon : c.horizon / c.eta;
    if (c.dt) {
      if (!(*c.dt > 0.0)) fail("dt must be > 0");
      try {
        step_count(horizon, *c.dt);
      } catch (const ConfigurationError&) {
        fail(fast ? "dt must divide horizon" : "dt must divide horizon / eta");
      }
      const double ratio = fast ? *c.dt * c.epsilon / c.eta : *c.dt * c.epsilon;
      if (ratio > 0.1 * (1.0 + 1e-12)) {
        fail(fast ? "dt must satisfy dt * epsilon / eta <= 0.1" : "dt must satisfy dt * epsilon <= 0.1");
      }
    }
  }
}

std::string serialize(const RunConfig& c) {
  json j;
  j["experiment"] = c.experiment;
  if (!c.problem_path.empty()) {
    j["problem"] = c.problem_path;
  } else {
    j["problem"] = json::parse(c.problem_json);
  }
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  auto put = [&](const char* key, auto value) {
    if (applies(c, key)) j[key] = value;
  };
  auto put_opt = [&](const char* key, const std::optional<std::vector<double>>& v) {
    if (applies(c, key)) j[key] = v ? json(*v) : json(nullptr);
  };
  put("epsilon", c.epsilon);
  put("eta", c.eta);
  put("eta_grid", c.eta_grid);
  put("epsilon_grid", c.epsilon_grid);
  put("horizon", c.horizon);
  if (applies(c, "dt")) j["dt"] = c.dt ? json(*c.dt) : json(nullptr);
  put("stiffness", c.stiffness);
  put("replicas", c.replicas);
  put("record_stride", c.record_stride);
  put_opt("x0", c.x0);
  put_opt("y0", c.y0);
  put_opt("x", c.x);
  put("timescale", c.timescale);
  put("record_noise", c.record_noise);
  put("observable", c.observable);
  put("quadrature", c.quadrature);
  put("quadrature_order", c.quadrature_order);
  put("quadrature_samples", c.quadrature_samples);
  put("detect_floor", c.detect_floor);
  put("eval_stride", c.eval_stride);
  put("limit_dt", c.limit_dt);
  put("common_grid", c.common_grid);
  put("n1_mode", c.n1_mode);
  put("n2_mode", c.n2_mode);
  put("num_iters", c.num_iters);
  put("delta", c.delta);
  put("sgd_noise", c.sgd_noise);
  put("svg", c.svg);
  return j.dump(2) + "\n";
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.experiment == b.experiment && a.problem_json == b.problem_json && serialize(a) == serialize(b);
}

}  // namespace pcgf::cli
