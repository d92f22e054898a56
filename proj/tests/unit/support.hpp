#pragma once

#include "pcgf/quadratic_problem.hpp"
#include "pcgf/types.hpp"

#include <initializer_list>

namespace pcgf::testing {

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  const int r = static_cast<int>(rows.size());
  const int c = static_cast<int>(rows.begin()->size());
  Matrix out(r, c);
  int i = 0;
  for (const auto& row : rows) {
    int j = 0;
    for (double x : row) out(i, j++) = x;
    ++i;
  }
  return out;
}

/// Reference family with every noise source removed (deterministic index).
inline QuadraticFamilySpec noise_free_spec() {
  QuadraticFamilySpec spec = reference_quadratic_spec();
  spec.b_noise.clear();
  spec.a_noise.clear();
  const QuadraticTestProblem full(reference_quadratic_spec());
  spec.targets = {{full.target_mean(), 1.0}};
  return spec;
}

}  // namespace pcgf::testing
