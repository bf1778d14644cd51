#include <benchmark/benchmark.h>

#include "capsnet/capsule.hpp"
#include "capsnet/model.hpp"
#include "capsnet/ops.hpp"
#include "capsnet/random.hpp"

namespace {

using capsnet::Tensor;

Tensor random_tensor(capsnet::Shape shape, std::uint64_t seed) {
  capsnet::Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = rng.normal();
  return t;
}

// conv1 at the default geometry: 32x32xC in, 9x9 kernel, stride 1
void BM_Conv1Forward(benchmark::State& state) {
  const auto filters = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({10, 32, 32, 3}, 1);
  const Tensor w = random_tensor({9, 9, 3, filters}, 2);
  const Tensor b({filters});
  for (auto _ : state) benchmark::DoNotOptimize(capsnet::ops::conv2d_forward(x, w, b, {1, 0}));
  state.SetItemsProcessed(state.iterations() * 10);
}
BENCHMARK(BM_Conv1Forward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Conv2Backward(benchmark::State& state) {
  const auto filters = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({10, 24, 24, filters}, 1);
  const Tensor w = random_tensor({9, 9, filters, filters}, 2);
  const Tensor g = random_tensor({10, 8, 8, filters}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(capsnet::ops::conv2d_backward(g, x, w, {2, 0}));
  state.SetItemsProcessed(state.iterations() * 10);
}
BENCHMARK(BM_Conv2Backward)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Squash(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const Tensor s = random_tensor({4096, dim}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(capsnet::capsule::squash(s));
  state.SetItemsProcessed(state.iterations() * 4096);
}
BENCHMARK(BM_Squash)->Arg(8)->Arg(32);

// P primary capsules of dim 8 routed into 43 class capsules of dim 32
void BM_PredictAndRoute(benchmark::State& state) {
  const auto p = static_cast<std::size_t>(state.range(0));
  const Tensor u = capsnet::capsule::squash(random_tensor({10, p, 8}, 5));
  Tensor w = random_tensor({p, 43, 32, 8}, 6);
  for (auto& x : w.data()) x *= 0.05;
  for (auto _ : state) {
    const Tensor uh = capsnet::capsule::predict_vectors(u, w);
    benchmark::DoNotOptimize(capsnet::capsule::route(uh, 3));
  }
  state.SetItemsProcessed(state.iterations() * 10);
}
BENCHMARK(BM_PredictAndRoute)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_ModelForwardBackward(benchmark::State& state) {
  capsnet::ModelConfig cfg;
  cfg.conv1_filters = cfg.conv2_filters = static_cast<std::size_t>(state.range(0));
  const capsnet::CapsNetModel model(cfg, 7);
  const Tensor x = random_tensor({10, 32, 32, 3}, 8);
  for (auto _ : state) {
    const auto f = model.forward(x, true, 9);
    benchmark::DoNotOptimize(model.backward(f, Tensor(f.v.shape()), Tensor(f.lengths.shape()), false));
  }
  state.SetItemsProcessed(state.iterations() * 10);
}
BENCHMARK(BM_ModelForwardBackward)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
