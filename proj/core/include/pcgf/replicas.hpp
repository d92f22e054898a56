#pragma once

#include "pcgf/random.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace pcgf {

/// Replica r of a run keyed by `key` draws from
/// RandomStream(derive_seed(master, key, r)).
struct ReplicaSettings {
  std::size_t replicas = 1000;
  std::uint64_t seed = 0;
  /// 0 picks std::thread::hardware_concurrency().
  std::size_t threads = 0;
};

inline std::size_t resolve_threads(std::size_t requested) noexcept {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Fixed block size of the ordered reduction. Block composition depends only
/// on the replica count, never on the thread count.
inline constexpr std::size_t kReplicaBlock = 32;

/// Runs `body(r, rng, acc)` for r in [0, count) and returns the reduction.
///
/// Replicas are grouped in blocks of kReplicaBlock; each block folds its
/// replicas in index order into a copy of `init`, and the blocks are merged
/// in block order with `Acc::merge`. Results are therefore bitwise identical
/// for any thread count. A replica that throws stops the run; the exception
/// is rethrown once all workers have joined.
template <typename Acc, typename Body>
Acc run_replicas(std::size_t count, std::uint64_t master, std::uint64_t key, std::size_t threads, const Acc& init,
                 Body&& body) {
  const std::size_t blocks = (count + kReplicaBlock - 1) / kReplicaBlock;
  std::vector<Acc> partial(blocks, init);
  std::vector<std::exception_ptr> errors(blocks);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};

  auto worker = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= blocks || failed.load()) return;
      try {
        const std::size_t end = std::min(count, (b + 1) * kReplicaBlock);
        for (std::size_t r = b * kReplicaBlock; r < end; ++r) {
          RandomStream rng(derive_seed(master, key, r));
          body(r, rng, partial[b]);
        }
      } catch (...) {
        errors[b] = std::current_exception();
        failed.store(true);
      }
    }
  };

  const std::size_t n = std::min(resolve_threads(threads), std::max<std::size_t>(blocks, 1));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  Acc total = init;
  for (auto& p : partial) total.merge(p);
  return total;
}

}  // namespace pcgf
