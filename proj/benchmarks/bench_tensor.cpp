#include <benchmark/benchmark.h>

#include <vector>

#include "lacos/rng.hpp"
#include "lacos/tensor.hpp"

namespace {

lacos::Tensor random_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols,
                            bool requires_grad = false) {
    lacos::Rng rng(seed);
    std::vector<float> v(rows * cols);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return lacos::Tensor::from_values(rows, cols, std::move(v), requires_grad);
}

void BM_MatmulForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto a = random_matrix(1, n, n);
    auto b = random_matrix(2, n, n);
    for (auto _ : state) {
        lacos::Graph g;
        auto y = g.matmul(a, b);
        benchmark::DoNotOptimize(y.values().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_MatmulForward)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulForwardBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto a = random_matrix(3, n, n, /*requires_grad=*/true);
    auto b = random_matrix(4, n, n, /*requires_grad=*/true);
    for (auto _ : state) {
        lacos::Graph g;
        auto loss = g.sum(g.matmul(a, b));
        g.backward(loss);
        benchmark::DoNotOptimize(a.grad().data());
        a.zero_grad();
        b.zero_grad();
    }
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(64)->Arg(128)->Arg(256);

void BM_SoftmaxRows(benchmark::State& state) {
    auto a = random_matrix(5, 256, 256);
    for (auto _ : state) {
        lacos::Graph g;
        auto y = g.softmax_rows(a);
        benchmark::DoNotOptimize(y.values().data());
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * 256 * 256 * 4);
}
BENCHMARK(BM_SoftmaxRows);

void BM_LayerNormRows(benchmark::State& state) {
    auto a = random_matrix(6, 256, 256);
    for (auto _ : state) {
        lacos::Graph g;
        auto y = g.layer_norm_rows(a, 1e-5f);
        benchmark::DoNotOptimize(y.values().data());
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * 256 * 256 * 4);
}
BENCHMARK(BM_LayerNormRows);

} // namespace

BENCHMARK_MAIN();
