#include <benchmark/benchmark.h>

#include <random>

#include "spikediff/diffusion.hpp"
#include "spikediff/network.hpp"
#include "spikediff/neuron.hpp"
#include "spikediff/ops.hpp"

namespace {

using namespace spikediff;

Tensor noise(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return standard_normal(shape, rng);
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Tensor x = noise({8, c, 16, 16}, 1), w = noise({c, c, 3, 3}, 2);
  for (auto _ : state) {
    Graph<float> g;
    benchmark::DoNotOptimize(conv2d(g.constant(x), g.constant(w), 1, 1).value());
  }
  state.SetItemsProcessed(state.iterations() * 8LL * c * c * 9 * 256);
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  const Tensor x = noise({8, 16, 16, 16}, 1), w = noise({16, 16, 3, 3}, 2);
  for (auto _ : state) {
    Graph<float> g;
    auto wv = g.input(Tensor(w).set_requires_grad(true));
    auto grads = g.backward(sum(conv2d(g.constant(x), wv, 1, 1)));
    benchmark::DoNotOptimize(grads.of(wv));
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_LifRun(benchmark::State& state) {
  const int t = static_cast<int>(state.range(0));
  const Tensor cur = noise({t * 256, 128}, 3);
  for (auto _ : state) {
    Graph<float> g;
    benchmark::DoNotOptimize(lif_run(LifParams{}, g.constant(cur), t).spikes.value());
  }
  state.SetItemsProcessed(state.iterations() * cur.size());
}
BENCHMARK(BM_LifRun)->Arg(1)->Arg(4);

void BM_NetForward(benchmark::State& state) {
  NetConfig c;
  if (state.range(0) == 1) {
    c.mode = ArchMode::Unet;
    c.image_size = 16;
    c.base_channels = 8;
  } else {
    c.hidden = 128;
  }
  SpikingNet net(c, 1);
  Shape shape = c.sample_shape();
  shape.insert(shape.begin(), 16);
  const Tensor x = noise(shape, 4);
  const std::vector<int> t(16, 500);
  for (auto _ : state) benchmark::DoNotOptimize(predict(net, x, t));
}
BENCHMARK(BM_NetForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DdimStep(benchmark::State& state) {
  const auto schedule = NoiseSchedule::linear(1000);
  const Tensor x = noise({1024, 2}, 5), eps = noise({1024, 2}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(ddim_step(schedule, x, eps, 500, 480));
}
BENCHMARK(BM_DdimStep);

}  // namespace

BENCHMARK_MAIN();
