#pragma once

#include "pcgf/quadratic_problem.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pcgf::cli {

/// Parsed, validated run description. Fields that do not apply to the
/// chosen experiment are left at their defaults and never serialized.
struct RunConfig {
  std::string experiment;

  /// Either the path the problem was loaded from, or empty for an inline
  /// or built-in problem. `problem_json` always holds the resolved object.
  std::string problem_path;
  std::string problem_json;

  double epsilon = 0.0;
  double eta = 0.0;
  std::vector<double> eta_grid;
  std::vector<double> epsilon_grid;
  double horizon = 1.0;
  std::optional<double> dt;
  double stiffness = 0.1;
  std::size_t replicas = 0;
  std::size_t record_stride = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "pcgf-out";
  std::optional<std::vector<double>> x0;
  std::optional<std::vector<double>> y0;

  // simulate
  std::string timescale = "fast";
  bool record_noise = false;

  // bias
  std::string observable = "abs_deviation";
  std::optional<std::vector<double>> x;
  std::string quadrature = "gauss_hermite";
  int quadrature_order = 20;
  std::size_t quadrature_samples = 100000;

  // averaging, khasminskii
  bool detect_floor = true;
  std::size_t eval_stride = 10;

  // deviation
  double limit_dt = 1e-3;
  bool common_grid = true;
  std::string n1_mode = "product_of_averages";
  std::string n2_mode = "average_of_product";

  // scgd-compare
  std::size_t num_iters = 10000;
  double delta = 0.1;
  std::string sgd_noise = "limit_deviation";

  bool svg = true;
};

const std::vector<std::string>& experiment_ids();

/// Parses JSON text. `base_dir` resolves a relative problem file path.
/// Unknown keys, keys that do not apply to the experiment and out-of-range
/// values throw ConfigurationError naming the field.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
RunConfig parse_config_file(const std::filesystem::path& path);

/// Canonical JSON with every applicable field present. parse_config of the
/// result gives back an equal RunConfig.
std::string serialize(const RunConfig& config);

/// Re-checks cross-field constraints (used after command-line overrides).
void validate(const RunConfig& config);

/// Builds the quadratic family from a problem object:
///     {"family": "reference"} | {"family": "reference_jacobian_noise"} |
///     {"family": "quadratic", "a_mean": [[..]], "b_mean": [..], ...}
QuadraticFamilySpec problem_spec_from_json(const std::string& text);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace pcgf::cli
