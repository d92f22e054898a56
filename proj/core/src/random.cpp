#include "pcgf/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pcgf {

std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t key) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(key + 0x9E3779B97F4A7C15ULL));
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t key1, std::uint64_t key2) noexcept {
  return derive_seed(derive_seed(master, key1), key2);
}

double RandomStream::normal() noexcept {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

void RandomStream::normals(Vector& out, int n) noexcept {
  out.resize(n);
  for (int i = 0; i < n; ++i) out[i] = normal();
}

std::size_t RandomStream::discrete(std::span<const double> cumulative) noexcept {
  const double u = uniform();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  const auto idx = static_cast<std::size_t>(it - cumulative.begin());
  return std::min(idx, cumulative.size() - 1);
}

}  // namespace pcgf
