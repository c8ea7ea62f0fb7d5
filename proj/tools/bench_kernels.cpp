// Serial reference vs OpenMP kernels.
#include <benchmark/benchmark.h>

#include "mlmtest/covariance.hpp"
#include "mlmtest/simulation.hpp"

using namespace mlmtest;

namespace {

SimConfig study_config(int N) {
    SimConfig c;
    c.scenarios = {Scenario{N, 0.25, 0.5}};
    c.replications = 48;
    c.keep_values = false;
    return c;
}

Design large_design(int N) {
    SimConfig c = study_config(N);
    RandomStream rng(7);
    return simulate_dataset(c, c.scenarios[0], rng);
}

const VectorXd& omega() {
    static const VectorXd om = (VectorXd(4) << 1.0, 0.25, 0.5, 0.05).finished();
    return om;
}

void BM_sigma_serial(benchmark::State& state) {
    const Design d = large_design(static_cast<int>(state.range(0)));
    const CovarianceModel model(d.family, omega());
    for (auto _ : state) benchmark::DoNotOptimize(derived_inverse_derivatives_serial(build_sigma_serial(model, d.Z, d.tau, 2)));
}

void BM_sigma_parallel(benchmark::State& state) {
    const Design d = large_design(static_cast<int>(state.range(0)));
    const CovarianceModel model(d.family, omega());
    for (auto _ : state) benchmark::DoNotOptimize(derived_inverse_derivatives(build_sigma(model, d.Z, d.tau, 2)));
}

void BM_study_serial(benchmark::State& state) {
    const SimConfig c = study_config(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(run_size_study_serial(c));
}

void BM_study_parallel(benchmark::State& state) {
    const SimConfig c = study_config(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(run_size_study(c));
}

}  // namespace

BENCHMARK(BM_sigma_serial)->Arg(240)->Arg(2400)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_sigma_parallel)->Arg(240)->Arg(2400)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_study_serial)->Arg(12)->Arg(36)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_study_parallel)->Arg(12)->Arg(36)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
