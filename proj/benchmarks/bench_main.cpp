#include <benchmark/benchmark.h>

#include "transmat/attention.hpp"
#include "transmat/network.hpp"
#include "transmat/ops.hpp"
#include "transmat/synthetic.hpp"

using namespace transmat;

namespace {

Tensor<float> noise(Shape shape, uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<float> n(0, 1);
    Tensor<float> t(std::move(shape));
    for (auto& v : t.storage()) v = n(rng);
    return t;
}

void BM_Attention(benchmark::State& state) {
    const int64_t L = state.range(0), d = state.range(1);
    const auto q = Var<float>::constant(noise({L, d}, 1)), k = Var<float>::constant(noise({L, d}, 2)),
               v = Var<float>::constant(noise({L, d}, 3));
    for (auto _ : state) benchmark::DoNotOptimize(attn::attention(q, k, v).value().data());
}
BENCHMARK(BM_Attention)->Args({16, 16})->Args({49, 32})->Args({64, 64});

// arg 0: grid side, arg 1: shifted
void BM_WindowAttentionTrain(benchmark::State& state) {
    const int64_t s = state.range(0), c = 64;
    const auto geom = attn::WindowGeometry::make(s, s, 4, state.range(1) != 0);
    const auto q = Var<float>::leaf(noise({1, s, s, c}, 1)), k = Var<float>::leaf(noise({1, s, s, c}, 2)),
               v = Var<float>::leaf(noise({1, s, s, c}, 3));
    for (auto _ : state) {
        auto y = ops::sum(attn::window_attention(q, k, v, 2, geom));
        y.backward();
        benchmark::DoNotOptimize(q.grad().data());
    }
}
BENCHMARK(BM_WindowAttentionTrain)->Args({16, 0})->Args({16, 1})->Args({32, 1})->Unit(benchmark::kMillisecond);

// Desk configuration; arg: image side.
void BM_NetworkForward(benchmark::State& state) {
    const int64_t side = state.range(0);
    Network<float> net(NetworkConfig{});
    synthetic::SyntheticConfig cfg;
    cfg.height = cfg.width = side;
    const auto s = synthetic::make_sample(cfg, 0);
    const LabelGrid labels = LabelGrid::from_trimap(s.trimap);
    const auto input = network_input<float>({s.image}, labels);
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(input, labels, false).value().data());
}
BENCHMARK(BM_NetworkForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_NetworkTrainStep(benchmark::State& state) {
    Network<float> net(NetworkConfig{});
    const auto s = synthetic::make_sample({}, 0);
    const LabelGrid labels = LabelGrid::from_trimap(s.trimap);
    const auto input = network_input<float>({s.image}, labels);
    for (auto _ : state) {
        net.parameters().zero_grad();
        auto y = ops::sum(net.forward(input, labels, true));
        y.backward();
    }
}
BENCHMARK(BM_NetworkTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
