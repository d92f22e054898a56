#include "pcgf/dynamics.hpp"
#include "pcgf/quadratic_problem.hpp"

#include <benchmark/benchmark.h>

using namespace pcgf;

namespace {

// One coupled path in fast time; the argument is 1/eta.
void BM_CoupledFastPath(benchmark::State& state) {
  const auto problem = reference_quadratic_problem();
  const MomentEvaluator moments(*problem);
  const double eta = 1.0 / static_cast<double>(state.range(0));
  SimulationConfig c;
  c.epsilon = 0.5;
  c.eta = eta;
  c.horizon = 1.0;
  c.dt = 0.1 * eta / c.epsilon;
  c.record_stride = 100;
  c.x0 = Vector::Zero(2);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    RandomStream rng(seed++);
    benchmark::DoNotOptimize(simulate_coupled_fast_timescale(moments, c, rng));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(step_count(c.horizon, c.dt)));
}
BENCHMARK(BM_CoupledFastPath)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Scgd(benchmark::State& state) {
  const auto problem = reference_quadratic_problem();
  const Vector z = Vector::Zero(2);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    RandomStream rng(seed++);
    benchmark::DoNotOptimize(run_scgd(*problem, 0.1, 1e-3, 10000, z, z, rng, 10));
  }
  state.SetItemsProcessed(state.iterations() * 10000);
}
BENCHMARK(BM_Scgd)->Unit(benchmark::kMillisecond);

}  // namespace
