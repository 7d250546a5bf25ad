#include <benchmark/benchmark.h>

#include "alignlab/losses.hpp"
#include "alignlab/random.hpp"

namespace {

using namespace alignlab;

struct Fixture {
    EmbeddingSet embeddings;
    ImageTextBatch batch;
    LossParams params;
    LossConfig config;
};

Fixture make_fixture(Objective objective, std::int64_t batch_size) {
    const std::int64_t tokens = 6, patches = 16, dim = 32;
    Rng rng(11);
    Fixture f;
    f.embeddings.v = Tensor::from_data(
        {batch_size, patches, dim},
        rng.normal_vector(static_cast<std::size_t>(batch_size * patches * dim), 1.0));
    f.embeddings.t = Tensor::from_data(
        {batch_size, tokens, dim},
        rng.normal_vector(static_cast<std::size_t>(batch_size * tokens * dim), 1.0));
    f.embeddings.v_bar = Tensor::from_data(
        {batch_size, dim}, rng.normal_vector(static_cast<std::size_t>(batch_size * dim), 1.0));
    f.embeddings.t_bar = Tensor::from_data(
        {batch_size, dim}, rng.normal_vector(static_cast<std::size_t>(batch_size * dim), 1.0));
    f.batch.batch_size = batch_size;
    f.batch.max_tokens = tokens;
    f.batch.token_ids.assign(static_cast<std::size_t>(batch_size * tokens), 1);
    f.batch.token_mask.assign(static_cast<std::size_t>(batch_size * tokens), 1);
    f.config.variant = objective;
    f.config.filip_token_drop = 0.0;
    f.config.mgca.attn_dim = 16;
    f.config.mgca.num_prototypes = 16;
    f.params = LossParams::fixed_temperature(0.07);
    f.params.extra = init_objective_params(f.config, dim, 5);
    return f;
}

void BM_LossForward(benchmark::State& state, Objective objective) {
    auto fixture = make_fixture(objective, state.range(0));
    NoGradGuard no_grad;
    for (auto _ : state) {
        auto out = evaluate_objective(fixture.embeddings, fixture.batch, fixture.params,
                                      fixture.config);
        benchmark::DoNotOptimize(out.total.data().data());
    }
}

void BM_LossForwardBackward(benchmark::State& state, Objective objective) {
    const std::int64_t batch_size = state.range(0);
    const std::int64_t tokens = 6, patches = 16, dim = 32;
    Rng rng(13);
    for (auto _ : state) {
        EmbeddingSet e;
        e.v = Tensor::from_data(
            {batch_size, patches, dim},
            rng.normal_vector(static_cast<std::size_t>(batch_size * patches * dim), 1.0), true);
        e.t = Tensor::from_data(
            {batch_size, tokens, dim},
            rng.normal_vector(static_cast<std::size_t>(batch_size * tokens * dim), 1.0), true);
        e.v_bar = Tensor::from_data(
            {batch_size, dim}, rng.normal_vector(static_cast<std::size_t>(batch_size * dim), 1.0),
            true);
        e.t_bar = Tensor::from_data(
            {batch_size, dim}, rng.normal_vector(static_cast<std::size_t>(batch_size * dim), 1.0),
            true);
        ImageTextBatch batch;
        batch.batch_size = batch_size;
        batch.max_tokens = tokens;
        batch.token_ids.assign(static_cast<std::size_t>(batch_size * tokens), 1);
        batch.token_mask.assign(static_cast<std::size_t>(batch_size * tokens), 1);
        LossConfig config;
        config.variant = objective;
        auto params = LossParams::fixed_temperature(0.07);
        auto out = evaluate_objective(e, batch, params, config);
        out.total.backward();
        benchmark::DoNotOptimize(e.v.grad().data());
    }
}

}  // namespace

BENCHMARK_CAPTURE(BM_LossForward, clip, alignlab::Objective::kClip)->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(BM_LossForward, sparc, alignlab::Objective::kSparc)->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(BM_LossForward, filip, alignlab::Objective::kFilip)->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(BM_LossForward, pacl, alignlab::Objective::kPacl)->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(BM_LossForward, gloria, alignlab::Objective::kGloria)->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(BM_LossForward, mgca, alignlab::Objective::kMgca)->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(BM_LossForwardBackward, sparc, alignlab::Objective::kSparc)->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(BM_LossForwardBackward, clip, alignlab::Objective::kClip)->Arg(8)->Arg(32);
