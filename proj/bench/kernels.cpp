// Parallel kernels against their serial references.
#include <benchmark/benchmark.h>

#include <map>

#include "v2n/agents.hpp"
#include "v2n/mlp.hpp"
#include "v2n/oracle.hpp"
#include "v2n/traffic.hpp"

using namespace v2n;

namespace {

IntensityTable day_table(int pops) {
  SynthParams sp;
  sp.pops = pops;
  return synth_intensity(sp);
}

std::shared_ptr<const Scenario> hour_scenario(int pops) {
  static std::map<int, std::shared_ptr<const Scenario>> cache;
  auto& sc = cache[pops];
  if (!sc) sc = std::make_shared<const Scenario>(make_scenario(generate_arrivals(day_table(pops), 1).window(8 * 3600.0, 9 * 3600.0), 2));
  return sc;
}

template <bool Parallel>
void BM_Replicate(benchmark::State& state) {
  const auto table = day_table(5);
  const int k = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(Parallel ? replicate(table, 1, k) : replicate_serial(table, 1, k));
  state.SetItemsProcessed(state.iterations() * k);
}

template <bool Parallel>
void BM_CnstSearch(benchmark::State& state) {
  const auto sc = hour_scenario(static_cast<int>(state.range(0)));
  const auto prof = std::make_shared<const ServiceProfile>(default_profile());
  const RewardConfig rc;
  for (auto _ : state)
    benchmark::DoNotOptimize(Parallel ? cnst_search(sc, prof, rc) : cnst_search_serial(sc, prof, rc));
}

template <bool Parallel>
void BM_OracleSolve(benchmark::State& state) {
  const auto sc = hour_scenario(3);
  const auto inst = make_oracle_instance(*sc, static_cast<std::size_t>(state.range(0)), default_profile(), RewardConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(Parallel ? solve(inst) : solve_serial(inst));
}

void BM_ActorForward(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  Rng rng(1);
  const auto net = MlpNet::random({10, width, width, 5}, Activation::kElu, Activation::kTanh, rng).cast<float>();
  const Eigen::MatrixXf x = Eigen::MatrixXf::Random(10, 1);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
  state.SetComplexityN(width);
}

}  // namespace

BENCHMARK(BM_Replicate<true>)->Arg(40)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Replicate<false>)->Arg(40)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_CnstSearch<true>)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_CnstSearch<false>)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_OracleSolve<true>)->Arg(8)->Arg(10)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_OracleSolve<false>)->Arg(8)->Arg(10)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ActorForward)->RangeMultiplier(2)->Range(32, 512)->Complexity(benchmark::oNSquared);

BENCHMARK_MAIN();
