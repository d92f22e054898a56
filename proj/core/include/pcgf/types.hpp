#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>

namespace pcgf {

/// Upper bound on the slow and fast dimensions. Vectors and matrices are
/// stack-allocated with this capacity so the inner simulation loops never
/// touch the heap.
inline constexpr int kMaxDim = 8;

using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

/// Index drawn from the distribution of w (inner map) or v (outer map).
using AtomIndex = std::size_t;

struct IndexPair {
  AtomIndex w = 0;
  AtomIndex v = 0;
};

/// A value together with its Monte Carlo standard error. Deterministic
/// routes leave `standard_error` at zero.
template <typename T>
struct Estimate {
  T value;
  T standard_error;
};

}  // namespace pcgf
