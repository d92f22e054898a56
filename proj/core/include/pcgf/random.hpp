#pragma once

#include "pcgf/types.hpp"

#include <cstdint>
#include <random>
#include <span>

namespace pcgf {

/// Seed derivation for independent streams.
///
/// A stream is identified by (master seed, key path). Each key is folded into
/// the running state with the SplitMix64 finalizer:
///
///     s0 = mix(master)
///     s_{i+1} = mix(s_i ^ mix(key_i + 0x9E3779B97F4A7C15))
///
/// The result depends only on the integers involved, never on thread
/// scheduling, so replica r of grid point g always sees the same stream.
std::uint64_t splitmix64(std::uint64_t z) noexcept;
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t key) noexcept;
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t key1, std::uint64_t key2) noexcept;

/// Pseudo-random stream with portable output: the engine is mt19937_64
/// (bit-specified by the standard) and the uniform/normal transforms are
/// implemented here, so draws are identical across standard libraries.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept;

  /// Fills `out` (resized to `n`) with i.i.d. standard normals.
  void normals(Vector& out, int n) noexcept;

  /// Draws an index with probability proportional to `cumulative` increments.
  /// `cumulative` must be nondecreasing with last entry 1.
  std::size_t discrete(std::span<const double> cumulative) noexcept;

  std::uint64_t next_u64() noexcept { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace pcgf
