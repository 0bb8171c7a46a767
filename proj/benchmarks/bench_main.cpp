#include <benchmark/benchmark.h>

#include "fadebif/averaging.hpp"
#include "fadebif/hamiltonian.hpp"
#include "fadebif/perturbation.hpp"
#include "fadebif/sde.hpp"

using namespace fadebif;

namespace {

pert::SdeSystem pendulum_system() {
  return pert::registry_get("ex1",
                            {{"h", 2}, {"p", 1}, {"q", 2}, {"lambda", -1.0}, {"mu", 1.0}});
}

void BM_ComputeOrbit(benchmark::State& state) {
  auto sys = pendulum_system();
  double e = 0.3;
  for (auto _ : state) {
    auto orbit = ham::compute_orbit(sys.ham, e, static_cast<int>(state.range(0)));
    benchmark::DoNotOptimize(orbit.period);
    e += 1e-9;  // defeat any caching
  }
}
BENCHMARK(BM_ComputeOrbit)->Arg(128)->Arg(256);

void BM_AngleTableColumn(benchmark::State& state) {
  auto sys = pendulum_system();
  ham::OrbitCache cache(sys.ham);
  double e = 0.4;
  for (auto _ : state) {
    auto table = avg::energy_angle_coefficients(sys, cache, {e}, 128);
    benchmark::DoNotOptimize(table.columns.size());
    e += 1e-9;
  }
}
BENCHMARK(BM_AngleTableColumn);

void BM_AveragingRecursion(benchmark::State& state) {
  auto sys = pendulum_system();
  ham::OrbitCache cache(sys.ham);
  auto grid = avg::log_spaced(0.02, 1.0, 8);
  auto table = avg::energy_angle_coefficients(sys, cache, grid, 128);
  for (auto _ : state) {
    auto drift = avg::averaging_recursion(table, 2);
    benchmark::DoNotOptimize(drift.lambda[1][0]);
  }
}
BENCHMARK(BM_AveragingRecursion);

void BM_StepSplit(benchmark::State& state) {
  auto sys = pendulum_system();
  Vec2 z{0.4, 0.0};
  double t = 1.0;
  sde::PhiloxStream stream(1, 0);
  std::uint64_t k = 0;
  for (auto _ : state) {
    Vec2 xi = stream.normal_pair(k++);
    z = sde::split_step(sys, z, t, 5e-3, {0.07 * xi.x, 0.07 * xi.y});
    t += 5e-3;
    benchmark::DoNotOptimize(z.x);
  }
}
BENCHMARK(BM_StepSplit);

void BM_StepEuler(benchmark::State& state) {
  auto sys = pendulum_system();
  Vec2 z{0.4, 0.0};
  double t = 1.0;
  sde::PhiloxStream stream(1, 0);
  std::uint64_t k = 0;
  for (auto _ : state) {
    Vec2 xi = stream.normal_pair(k++);
    z = sde::em_step(sys, z, t, 1e-4, {0.01 * xi.x, 0.01 * xi.y});
    t += 1e-4;
    benchmark::DoNotOptimize(z.x);
  }
}
BENCHMARK(BM_StepEuler);

void BM_PhiloxNormalPair(benchmark::State& state) {
  sde::PhiloxStream stream(99, 3);
  std::uint64_t k = 0;
  for (auto _ : state) {
    Vec2 v = stream.normal_pair(k++);
    benchmark::DoNotOptimize(v.x);
  }
}
BENCHMARK(BM_PhiloxNormalPair);

}  // namespace

BENCHMARK_MAIN();
