#include <benchmark/benchmark.h>

#include "grassflow/kernels.hpp"
#include "grassflow/rng.hpp"
#include "grassflow/trainer.hpp"

using namespace grassflow;

namespace {

BatchMatrix random_batch(int r, int c, int b, std::uint64_t seed) {
  Rng rng(seed);
  BatchMatrix m(r, c, b);
  for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = rng.normal();
  return m;
}

// Threads are the second argument; 0 selects the serial reference kernel.
template <class Fast, class Ref>
void run(benchmark::State& state, Fast fast, Ref ref) {
  const int threads = int(state.range(1));
  set_num_threads(std::max(1, threads));
  for (auto _ : state) {
    if (threads == 0) {
      ref();
    } else {
      fast();
    }
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GemmSharedWeight(benchmark::State& state) {
  const int batch = int(state.range(0));
  const BatchMatrix w = random_batch(64, 64, 1, 1);
  const BatchMatrix x = random_batch(64, 1, batch, 2);
  BatchMatrix out;
  run(state, [&] { kernels::gemm(w, false, x, false, false, out); },
      [&] { kernels::reference::gemm(w, false, x, false, false, out); });
}

void BM_GemmBatched(benchmark::State& state) {
  const int batch = int(state.range(0));
  const BatchMatrix a = random_batch(3, 3, batch, 3);
  const BatchMatrix b = random_batch(3, 2, batch, 4);
  BatchMatrix out;
  run(state, [&] { kernels::gemm(a, true, b, false, false, out); },
      [&] { kernels::reference::gemm(a, true, b, false, false, out); });
}

void BM_Tanh(benchmark::State& state) {
  const BatchMatrix a = random_batch(64, 1, int(state.range(0)), 5);
  BatchMatrix out;
  run(state, [&] { kernels::tanh(a, out); }, [&] { kernels::reference::tanh(a, out); });
}

void BM_Inverse(benchmark::State& state) {
  const int batch = int(state.range(0));
  BatchMatrix a = random_batch(4, 4, batch, 6);
  for (int b = 0; b < batch; ++b) a.block(b) += 4.0 * Eigen::MatrixXd::Identity(4, 4);
  BatchMatrix out;
  run(state, [&] { kernels::inverse(a, out); }, [&] { kernels::reference::inverse(a, out); });
}

void BM_Logdet(benchmark::State& state) {
  const int batch = int(state.range(0));
  BatchMatrix a = random_batch(6, 6, batch, 7);
  for (int b = 0; b < batch; ++b) a.block(b) += 6.0 * Eigen::MatrixXd::Identity(6, 6);
  BatchMatrix out;
  run(state, [&] { kernels::logdet(a, out); }, [&] { kernels::reference::logdet(a, out); });
}

void BM_LossAndGradient(benchmark::State& state) {
  TrainConfig cfg;
  set_num_threads(int(state.range(1)));
  const VectorFieldParams p = train::init_params(cfg);
  const auto prior = train::make_prior(cfg);
  Rng rng(8);
  const SampleBatch b = data::generate_texture("2spirals", int(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(train::loss_and_gradient(p, prior, b.points, 0.25, 50));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void kernel_args(benchmark::internal::Benchmark* b) {
  for (int batch : {100, 1000, 10000})
    for (int threads : {0, 1, 2, 4}) b->Args({batch, threads});
  b->ArgNames({"batch", "threads"});
}

}  // namespace

BENCHMARK(BM_GemmSharedWeight)->Apply(kernel_args);
BENCHMARK(BM_GemmBatched)->Apply(kernel_args);
BENCHMARK(BM_Tanh)->Apply(kernel_args);
BENCHMARK(BM_Inverse)->Apply(kernel_args);
BENCHMARK(BM_Logdet)->Apply(kernel_args);
BENCHMARK(BM_LossAndGradient)->Args({100, 1})->Args({100, 2})->ArgNames({"batch", "threads"})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
