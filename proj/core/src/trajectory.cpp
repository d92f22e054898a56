#include "pcgf/trajectory.hpp"

#include "pcgf/errors.hpp"
#include "pcgf/io.hpp"

#include <fstream>
#include <sstream>

namespace pcgf {

void Trajectory::validate(bool stochastic) const {
  if (times.empty()) throw ConfigurationError("trajectory is empty");
  if (states_x.size() != times.size()) throw ConfigurationError("trajectory: x states and times differ in length");
  if (!states_y.empty() && states_y.size() != times.size()) {
    throw ConfigurationError("trajectory: y states and times differ in length");
  }
  if (times.front() != 0.0) throw ConfigurationError("trajectory: time grid must start at 0");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw ConfigurationError("trajectory: times must be strictly increasing");
  }
  if (stochastic && !(meta.dt > 0.0)) throw ConfigurationError("trajectory: meta.dt must be > 0");
}

void write_trajectory_csv(const Trajectory& t, std::ostream& out) {
  out << "# epsilon=" << format_double(t.meta.epsilon) << '\n';
  out << "# eta=" << format_double(t.meta.eta) << '\n';
  out << "# dt=" << format_double(t.meta.dt) << '\n';
  out << "# seed=" << t.meta.seed << '\n';
  out << "# scheme=" << t.meta.scheme << '\n';
  out << "# record_stride=" << t.record_stride << '\n';
  for (const auto& [k, v] : t.meta.extra) out << "# " << k << '=' << v << '\n';
  const int n = t.dim_x();
  const int m = t.dim_y();
  out << "time";
  for (int i = 0; i < n; ++i) out << ",x_" << i;
  for (int i = 0; i < m; ++i) out << ",y_" << i;
  out << '\n';
  for (std::size_t r = 0; r < t.size(); ++r) {
    out << format_double(t.times[r]);
    for (int i = 0; i < n; ++i) out << ',' << format_double(t.states_x[r](i));
    for (int i = 0; i < m; ++i) out << ',' << format_double(t.states_y[r](i));
    out << '\n';
  }
}

void write_trajectory_csv(const Trajectory& trajectory, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigurationError("cannot open " + path + " for writing");
  write_trajectory_csv(trajectory, out);
  if (!out) throw ConfigurationError("failed writing " + path);
}

Trajectory read_trajectory_csv(std::istream& in) {
  Trajectory t;
  std::string line;
  int n = -1, m = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string value = line.substr(eq + 1);
      if (key == "epsilon") t.meta.epsilon = parse_double(value);
      else if (key == "eta") t.meta.eta = parse_double(value);
      else if (key == "dt") t.meta.dt = parse_double(value);
      else if (key == "seed") t.meta.seed = std::stoull(value);
      else if (key == "scheme") t.meta.scheme = value;
      else if (key == "record_stride") t.record_stride = std::stoull(value);
      else t.meta.extra[key] = value;
      continue;
    }
    const auto fields = split_csv_line(line);
    if (n < 0) {
      if (fields.empty() || fields[0] != "time") throw ConfigurationError("trajectory CSV: missing header row");
      n = 0;
      for (std::size_t i = 1; i < fields.size(); ++i) {
        if (fields[i].rfind("x_", 0) == 0) {
          if (m > 0) throw ConfigurationError("trajectory CSV: x columns must precede y columns");
          ++n;
        } else if (fields[i].rfind("y_", 0) == 0) {
          ++m;
        } else {
          throw ConfigurationError("trajectory CSV: unexpected column " + fields[i]);
        }
      }
      continue;
    }
    if (static_cast<int>(fields.size()) != 1 + n + m) {
      throw ConfigurationError("trajectory CSV: row has wrong number of fields");
    }
    t.times.push_back(parse_double(fields[0]));
    Vector x(n);
    for (int i = 0; i < n; ++i) x(i) = parse_double(fields[1 + i]);
    t.states_x.push_back(x);
    if (m > 0) {
      Vector y(m);
      for (int i = 0; i < m; ++i) y(i) = parse_double(fields[1 + n + i]);
      t.states_y.push_back(y);
    }
  }
  if (n < 0) throw ConfigurationError("trajectory CSV: missing header row");
  return t;
}

Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigurationError("cannot open " + path);
  return read_trajectory_csv(in);
}

}  // namespace pcgf
