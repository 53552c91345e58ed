#include <benchmark/benchmark.h>

#include <vector>

#include "lacos/quant.hpp"
#include "lacos/rng.hpp"
#include "lacos/tensor.hpp"

namespace {

lacos::Tensor random_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols) {
    lacos::Rng rng(seed);
    std::vector<float> v(rows * cols);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return lacos::Tensor::from_values(rows, cols, std::move(v));
}

void BM_QuantizeBlockwise(benchmark::State& state) {
    const auto bsz = static_cast<std::size_t>(state.range(0));
    auto w = random_matrix(1, 512, 512);
    for (auto _ : state) {
        auto q = lacos::quantize_blockwise(w, {.block_size = bsz});
        benchmark::DoNotOptimize(q.codes.data());
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * 512 * 512 * 4);
}
BENCHMARK(BM_QuantizeBlockwise)->Arg(16)->Arg(64)->Arg(256);

void BM_DequantizeBlockwise(benchmark::State& state) {
    const auto bsz = static_cast<std::size_t>(state.range(0));
    auto w = random_matrix(2, 512, 512);
    auto q = lacos::quantize_blockwise(w, {.block_size = bsz});
    for (auto _ : state) {
        auto back = lacos::dequantize_blockwise(q);
        benchmark::DoNotOptimize(back.values().data());
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * 512 * 512 * 4);
}
BENCHMARK(BM_DequantizeBlockwise)->Arg(16)->Arg(64)->Arg(256);

void BM_QuantizedMatmul(benchmark::State& state) {
    auto x = random_matrix(3, 32, 256);
    auto w = random_matrix(4, 256, 256);
    auto q = lacos::quantize_blockwise(w, {.block_size = 64});
    for (auto _ : state) {
        lacos::Graph g;
        auto y = lacos::quantized_matmul(g, x, q);
        benchmark::DoNotOptimize(y.values().data());
    }
}
BENCHMARK(BM_QuantizedMatmul);

} // namespace

BENCHMARK_MAIN();
