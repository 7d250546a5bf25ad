#include <benchmark/benchmark.h>

#include "alignlab/random.hpp"
#include "alignlab/tensor.hpp"

namespace {

alignlab::Tensor random_matrix(std::int64_t rows, std::int64_t cols, std::uint64_t seed) {
    alignlab::Rng rng(seed);
    return alignlab::Tensor::from_data({rows, cols}, rng.normal_vector(rows * cols, 1.0));
}

void BM_Matmul(benchmark::State& state) {
    const std::int64_t n = state.range(0);
    auto a = random_matrix(n, n, 1);
    auto b = random_matrix(n, n, 2);
    for (auto _ : state) {
        auto c = alignlab::matmul(a, b);
        benchmark::DoNotOptimize(c.data().data());
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_Softmax(benchmark::State& state) {
    const std::int64_t rows = state.range(0);
    auto x = random_matrix(rows, 256, 3);
    for (auto _ : state) {
        auto y = alignlab::softmax(x, 1);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_Softmax)->Arg(16)->Arg(128);

void BM_L2Normalize(benchmark::State& state) {
    auto x = random_matrix(state.range(0), 64, 4);
    for (auto _ : state) {
        auto y = alignlab::l2_normalize(x, 1);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_L2Normalize)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
