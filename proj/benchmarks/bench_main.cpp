#include <benchmark/benchmark.h>

#include "ofa/objectives.hpp"
#include "ofa/training.hpp"

using namespace ofa;

namespace {

struct Fixture {
  ModelConfig cfg;
  Model model;
  PreconditionerSet precond;
  std::vector<Example> batch;

  Fixture(std::size_t d, std::size_t n, std::size_t layers, std::size_t batch_size)
      : cfg(make_cfg(d, n, layers)), model(cfg), precond(PreconditionerSet::ones(cfg)) {
    TaskSpec s;
    s.d = d;
    s.n_demos = n;
    s.cov_spectrum.assign(d, 1.0);
    s.noise_std = 0.1;
    batch = make_examples(sample_suite(s, batch_size, RngStream(1)));
  }

  static ModelConfig make_cfg(std::size_t d, std::size_t n, std::size_t layers) {
    ModelConfig c;
    c.d = d;
    c.n_demos = n;
    c.layers = layers;
    return c;
  }
};

void BM_Forward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Fixture f(d, 2 * d, 4, 1);
  for (auto _ : state) benchmark::DoNotOptimize(forward(f.batch[0].prompt, f.model, f.precond));
}
BENCHMARK(BM_Forward)->Arg(4)->Arg(8)->Arg(16);

void BM_HutchinsonLayer(benchmark::State& state) {
  const Fixture f(4, 8, 4, 1);
  const Trajectory tr = forward(f.batch[0].prompt, f.model, f.precond);
  SharpnessConfig cfg;
  cfg.n_probes = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    RngStream rng(3);
    benchmark::DoNotOptimize(hutchinson_layer_trace(f.model, f.precond, tr.states[1], 1, cfg, rng));
  }
}
BENCHMARK(BM_HutchinsonLayer)->Arg(8)->Arg(256);

void BM_GradObjective(benchmark::State& state) {
  const Fixture f(4, 8, 4, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        grad_objective(f.model, f.precond, f.batch, 1e-3, 1e-3, SharpnessConfig{}, RngStream(2)));
  }
}
BENCHMARK(BM_GradObjective)->Arg(1)->Arg(16);

void BM_TotalObjective(benchmark::State& state) {
  const Fixture f(4, 8, 4, 16);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        total_objective(f.model, f.precond, f.batch, 1e-3, 1e-3, SharpnessConfig{}, RngStream(2)));
  }
}
BENCHMARK(BM_TotalObjective);

}  // namespace

BENCHMARK_MAIN();
