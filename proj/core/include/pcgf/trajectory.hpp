#pragma once

#include "pcgf/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pcgf {

struct TrajectoryMeta {
  double epsilon = 0.0;
  double eta = 0.0;
  double dt = 0.0;
  std::uint64_t seed = 0;
  std::string scheme;
  /// Free-form extra metadata, written as `# key=value` lines.
  std::map<std::string, std::string> extra;
};

/// Standard normals driving an Euler-Maruyama path, one entry per step.
/// The Brownian increment of step k is sqrt(dt) * fast[k] (resp. slow[k]),
/// so replaying the record on a rescaled clock reproduces the path exactly.
struct NoiseRecord {
  double dt = 0.0;
  std::vector<Vector> fast;  // W1, dimension m
  std::vector<Vector> slow;  // W2, dimension n
};

/// A recorded path. `states_y` is empty for paths without a fast variable.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states_x;
  std::vector<Vector> states_y;
  TrajectoryMeta meta;
  std::optional<NoiseRecord> noise;
  /// Number of integration steps between consecutive recorded states.
  std::size_t record_stride = 1;

  std::size_t size() const noexcept { return times.size(); }
  bool has_y() const noexcept { return !states_y.empty(); }
  int dim_x() const { return states_x.empty() ? 0 : static_cast<int>(states_x.front().size()); }
  int dim_y() const { return states_y.empty() ? 0 : static_cast<int>(states_y.front().size()); }

  /// Checks equal lengths, strictly increasing times from 0 and meta.dt > 0
  /// when `stochastic`; throws ConfigurationError.
  void validate(bool stochastic = false) const;

  void reserve(std::size_t n) {
    times.reserve(n);
    states_x.reserve(n);
  }
};

/// CSV: `# key=value` meta lines, then a header `time,x_0..,y_0..`, then rows
/// at full round-trip precision. Noise records are not serialized.
void write_trajectory_csv(const Trajectory& trajectory, std::ostream& out);
void write_trajectory_csv(const Trajectory& trajectory, const std::string& path);
Trajectory read_trajectory_csv(std::istream& in);
Trajectory read_trajectory_csv(const std::string& path);

}  // namespace pcgf
