#include <benchmark/benchmark.h>

#include "logicdiff/backend.hpp"
#include "logicdiff/eval.hpp"

using namespace logicdiff;

namespace {

struct HeadFixture {
  RoleHeadParams params;
  HiddenMatrix hidden;
  std::vector<Position> rows;

  explicit HeadFixture(std::size_t dim, std::size_t n) : hidden(n, dim) {
    Rng rng(1);
    params = RoleHeadParams::initialized(dim, rng);
    std::normal_distribution<float> g(0, 1);
    for (auto& v : hidden.data) v = g(rng);
    rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  }
};

void BM_PredictRolesSerial(benchmark::State& state) {
  HeadFixture f(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(predict_roles_serial(f.params, f.hidden, f.rows));
  state.SetItemsProcessed(state.iterations() * state.range(1));
}

void BM_PredictRolesOpenMP(benchmark::State& state) {
  HeadFixture f(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(predict_roles(f.params, f.hidden, f.rows));
  state.SetItemsProcessed(state.iterations() * state.range(1));
}

// D=32 matches the synthetic backend; D=4096 is the served-model width.
BENCHMARK(BM_PredictRolesSerial)->Args({32, 256})->Args({4096, 256})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_PredictRolesOpenMP)->Args({32, 256})->Args({4096, 256})->Unit(benchmark::kMicrosecond);

void run_eval(benchmark::State& state, bool parallel) {
  CorpusConfig cc;
  cc.n_problems = static_cast<std::size_t>(state.range(0));
  const auto problems = generate_corpus(cc);
  EvalConfig cfg;
  cfg.generation.steps = cfg.generation.gen_len = 64;
  cfg.parallel = parallel;
  const auto probe = role_block_probe();
  const auto factory = synthetic_factory(Vocab::builtin(), TrapConfig{});
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate(problems, Vocab::builtin(), cfg, factory, &probe));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_EvaluateSerial(benchmark::State& state) { run_eval(state, false); }
void BM_EvaluateParallel(benchmark::State& state) { run_eval(state, true); }

BENCHMARK(BM_EvaluateSerial)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateParallel)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
