#include "alignlab/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "alignlab/grad_check.hpp"
#include "alignlab/random.hpp"

using namespace alignlab;

namespace {

// Independent brute-force evaluation of the alignment pipeline for one row:
// min-max normalize, zero entries below sigma, renormalize to sum 1.
std::vector<double> alignment_row_oracle(std::vector<double> s, double sigma) {
    double lo = s[0], hi = s[0];
    for (double v : s) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) return std::vector<double>(s.size(), 1.0 / static_cast<double>(s.size()));
    std::vector<double> out(s.size());
    double total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double normalized = (s[i] - lo) / (hi - lo);
        out[i] = normalized >= sigma ? normalized : 0.0;
        total += out[i];
    }
    for (auto& v : out) v /= total;
    return out;
}

// Plain-double symmetric InfoNCE on a logit matrix; used as an oracle.
double info_nce_oracle(const std::vector<std::vector<double>>& logits) {
    const std::size_t n = logits.size();
    double row_term = 0.0, col_term = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row_lse = 0.0, col_lse = 0.0;
        double row_max = -1e300, col_max = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
            row_max = std::max(row_max, logits[i][j]);
            col_max = std::max(col_max, logits[j][i]);
        }
        for (std::size_t j = 0; j < n; ++j) {
            row_lse += std::exp(logits[i][j] - row_max);
            col_lse += std::exp(logits[j][i] - col_max);
        }
        row_term += row_max + std::log(row_lse) - logits[i][i];
        col_term += col_max + std::log(col_lse) - logits[i][i];
    }
    return 0.5 * (row_term + col_term) / static_cast<double>(n);
}

Tensor tensor2(std::vector<std::vector<double>> rows, bool requires_grad = false) {
    const std::int64_t r = static_cast<std::int64_t>(rows.size());
    const std::int64_t c = static_cast<std::int64_t>(rows[0].size());
    std::vector<double> flat;
    for (auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
    return Tensor::from_data({r, c}, std::move(flat), requires_grad);
}

ImageTextBatch batch_with_mask(std::int64_t batch, std::int64_t max_tokens,
                               const std::vector<std::int64_t>& lengths) {
    ImageTextBatch out;
    out.batch_size = batch;
    out.max_tokens = max_tokens;
    out.token_ids.assign(static_cast<std::size_t>(batch * max_tokens), 0);
    out.token_mask.assign(static_cast<std::size_t>(batch * max_tokens), 0);
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t l = 0; l < lengths[static_cast<std::size_t>(b)]; ++l) {
            out.token_mask[static_cast<std::size_t>(b * max_tokens + l)] = 1;
            out.token_ids[static_cast<std::size_t>(b * max_tokens + l)] = l + 1;
        }
    }
    return out;
}

EmbeddingSet random_embeddings(std::int64_t batch, std::int64_t tokens, std::int64_t patches,
                               std::int64_t dim, std::uint64_t seed, bool requires_grad = false) {
    Rng rng(seed);
    EmbeddingSet e;
    e.v = Tensor::from_data({batch, patches, dim},
                            rng.normal_vector(static_cast<std::size_t>(batch * patches * dim), 1.0),
                            requires_grad);
    e.t = Tensor::from_data({batch, tokens, dim},
                            rng.normal_vector(static_cast<std::size_t>(batch * tokens * dim), 1.0),
                            requires_grad);
    e.v_bar = Tensor::from_data({batch, dim},
                                rng.normal_vector(static_cast<std::size_t>(batch * dim), 1.0),
                                requires_grad);
    e.t_bar = Tensor::from_data({batch, dim},
                                rng.normal_vector(static_cast<std::size_t>(batch * dim), 1.0),
                                requires_grad);
    return e;
}

// All-identical embeddings; every cosine is exactly 1.
EmbeddingSet uniform_embeddings(std::int64_t batch, std::int64_t tokens, std::int64_t patches,
                                std::int64_t dim) {
    std::vector<double> unit(static_cast<std::size_t>(dim), 0.0);
    unit[0] = 1.0;
    unit[1] = 0.5;
    EmbeddingSet e;
    std::vector<double> v, t, g;
    for (std::int64_t i = 0; i < batch * patches; ++i) v.insert(v.end(), unit.begin(), unit.end());
    for (std::int64_t i = 0; i < batch * tokens; ++i) t.insert(t.end(), unit.begin(), unit.end());
    for (std::int64_t i = 0; i < batch; ++i) g.insert(g.end(), unit.begin(), unit.end());
    e.v = Tensor::from_data({batch, patches, dim}, v);
    e.t = Tensor::from_data({batch, tokens, dim}, t);
    e.v_bar = Tensor::from_data({batch, dim}, g);
    e.t_bar = Tensor::from_data({batch, dim}, std::move(g));
    return e;
}

}  // namespace

// ---------------------------------------------------------------- global ----

TEST(GlobalContrastive, IdentityPairB2) {
    auto v = tensor2({{1, 0}, {0, 1}});
    auto t = tensor2({{1, 0}, {0, 1}});
    const double loss = global_contrastive(v, t, Tensor::scalar(1.0)).item();
    // Direct evaluation of the objective: -log(e / (e + 1)) = log(1 + 1/e).
    EXPECT_NEAR(loss, std::log1p(std::exp(-1.0)), 1e-12);
}

TEST(GlobalContrastive, UniformCosinesGiveLogB) {
    auto v = tensor2({{2, 0}, {2, 0}});
    auto t = tensor2({{2, 0}, {2, 0}});
    EXPECT_NEAR(global_contrastive(v, t, Tensor::scalar(0.3)).item(), std::log(2.0), 1e-9);
}

TEST(GlobalContrastive, LossDropsAsMatchedSimilarityRises) {
    auto t = tensor2({{1, 0}, {0, 1}});
    auto weak = tensor2({{1, 0.8}, {0.8, 1}});
    auto strong = tensor2({{1, 0.2}, {0.2, 1}});
    const double weak_loss = global_contrastive(weak, t, Tensor::scalar(1.0)).item();
    const double strong_loss = global_contrastive(strong, t, Tensor::scalar(1.0)).item();
    EXPECT_LT(strong_loss, weak_loss);
}

TEST(GlobalContrastive, SingletonBatchRejected) {
    auto v = tensor2({{1, 0}});
    EXPECT_THROW(global_contrastive(v, v, Tensor::scalar(1.0)), NumericError);
}

// ------------------------------------------------------------- alignment ----

TEST(ComputeAlignment, SpecRowOracle) {
    // s row [0.2, 0.5, 0.8], sigma = 1/3.
    auto t = tensor2({{1}});
    auto v = tensor2({{0.2}, {0.5}, {0.8}});
    auto m = compute_alignment(t, v, 1.0 / 3.0, AlignmentMode::kSparseMinmax);
    EXPECT_NEAR(m.s_hat.at({0, 0}), 0.0, 1e-12);
    EXPECT_NEAR(m.s_hat.at({0, 1}), 0.5, 1e-12);
    EXPECT_NEAR(m.s_hat.at({0, 2}), 1.0, 1e-12);
    EXPECT_NEAR(m.a.at({0, 0}), 0.0, 1e-12);
    EXPECT_NEAR(m.a.at({0, 1}), 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(m.a.at({0, 2}), 2.0 / 3.0, 1e-12);
    const auto oracle = alignment_row_oracle({0.2, 0.5, 0.8}, 1.0 / 3.0);
    for (int p = 0; p < 3; ++p) EXPECT_NEAR(m.a.at({0, p}), oracle[static_cast<std::size_t>(p)], 1e-12);
}

TEST(ComputeAlignment, ConstantRowFallsBackToUniform) {
    auto t = tensor2({{1}});
    auto v = tensor2({{0.4}, {0.4}, {0.4}, {0.4}});
    auto m = compute_alignment(t, v, 0.25, AlignmentMode::kSparseMinmax);
    for (int p = 0; p < 4; ++p) {
        EXPECT_DOUBLE_EQ(m.s_hat.at({0, p}), 0.0);
        EXPECT_DOUBLE_EQ(m.a.at({0, p}), 0.25);
    }
}

TEST(ComputeAlignment, SoftmaxModeOnZeros) {
    auto t = tensor2({{0}});
    auto v = tensor2({{0}, {0}, {0}});
    auto m = compute_alignment(t, v, 0.0, AlignmentMode::kSoftmax);
    for (int p = 0; p < 3; ++p) EXPECT_NEAR(m.a.at({0, p}), 1.0 / 3.0, 1e-12);
}

TEST(ComputeAlignment, RandomRowsMatchOracle) {
    Rng rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        const std::int64_t patches = rng.uniform_int(2, 9);
        std::vector<double> trow = {1.0};
        std::vector<std::vector<double>> vrows;
        std::vector<double> srow;
        for (std::int64_t p = 0; p < patches; ++p) {
            const double value = rng.uniform(-2, 2);
            vrows.push_back({value});
            srow.push_back(value);
        }
        const double sigma = 1.0 / static_cast<double>(patches);
        auto m = compute_alignment(tensor2({trow}), tensor2(vrows), sigma,
                                   AlignmentMode::kSparseMinmax);
        const auto oracle = alignment_row_oracle(srow, sigma);
        for (std::int64_t p = 0; p < patches; ++p) {
            EXPECT_NEAR(m.a.at({0, p}), oracle[static_cast<std::size_t>(p)], 1e-12);
        }
    }
}

TEST(ComputeAlignment, RowProperties) {
    // Nonzero row survival, argmax survival at sigma = 1/P, rows sum to 1.
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::int64_t tokens = rng.uniform_int(1, 5);
        const std::int64_t patches = rng.uniform_int(2, 8);
        const std::int64_t dim = 4;
        auto t = Tensor::from_data({tokens, dim}, rng.normal_vector(static_cast<std::size_t>(tokens * dim), 1.0));
        auto v = Tensor::from_data({patches, dim}, rng.normal_vector(static_cast<std::size_t>(patches * dim), 1.0));
        auto m = compute_alignment(t, v, 1.0 / static_cast<double>(patches),
                                   AlignmentMode::kSparseMinmax);
        for (std::int64_t l = 0; l < tokens; ++l) {
            double row_sum = 0.0;
            int nonzeros = 0;
            for (std::int64_t p = 0; p < patches; ++p) {
                const double w = m.a.at({l, p});
                EXPECT_GE(w, 0.0);
                row_sum += w;
                if (w > 0.0) ++nonzeros;
            }
            EXPECT_GE(nonzeros, 1);
            EXPECT_NEAR(row_sum, 1.0, 1e-9);
            const auto arg = argmax(m.s, 1);
            EXPECT_GT(m.a.at({l, arg[static_cast<std::size_t>(l)]}), 0.0);
        }
    }
}

TEST(ComputeAlignment, RowsAreDecoupled) {
    Rng rng(41);
    auto v = Tensor::from_data({4, 3}, rng.normal_vector(12, 1.0));
    auto t1 = Tensor::from_data({2, 3}, rng.normal_vector(6, 1.0));
    auto t2_data = std::vector<double>(t1.data().begin(), t1.data().end());
    t2_data[3] += 1.5;  // edit row 1 only
    t2_data[4] -= 0.25;
    auto t2 = Tensor::from_data({2, 3}, std::move(t2_data));
    auto m1 = compute_alignment(t1, v, 0.25, AlignmentMode::kSparseMinmax);
    auto m2 = compute_alignment(t2, v, 0.25, AlignmentMode::kSparseMinmax);
    for (std::int64_t p = 0; p < 4; ++p) {
        EXPECT_DOUBLE_EQ(m1.a.at({0, p}), m2.a.at({0, p}));  // row 0 untouched
    }
}

TEST(ComputeAlignment, OneToManyTiesVersusSoftmax) {
    // Two patches tied at the max: sparse weights split 0.5/0.5; softmax
    // weights concentrate (entropy strictly decreases) as magnitude grows.
    auto t = tensor2({{1}});
    auto v = tensor2({{1.0}, {1.0}, {0.2}, {0.0}});
    auto sparse = compute_alignment(t, v, 0.25, AlignmentMode::kSparseMinmax);
    EXPECT_NEAR(sparse.a.at({0, 0}), 0.5, 1e-12);
    EXPECT_NEAR(sparse.a.at({0, 1}), 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(sparse.a.at({0, 2}), 0.0);
    EXPECT_DOUBLE_EQ(sparse.a.at({0, 3}), 0.0);

    double previous_entropy = 1e300;
    for (double gain : {1.0, 5.0, 25.0}) {
        auto soft = compute_alignment(tensor2({{gain}}), v, 0.25, AlignmentMode::kSoftmax);
        double entropy = 0.0;
        for (int p = 0; p < 4; ++p) {
            const double w = soft.a.at({0, p});
            if (w > 0) entropy -= w * std::log(w);
        }
        EXPECT_LT(entropy, previous_entropy);
        previous_entropy = entropy;
    }
}

// ----------------------------------------------------------- group/fine ----

TEST(GroupPatches, OneHotSelectsPatch) {
    auto a = tensor2({{0, 1, 0}, {0, 0, 1}});
    auto v = tensor2({{1, 2}, {3, 4}, {5, 6}});
    auto c = group_patches(a, v);
    EXPECT_DOUBLE_EQ(c.at({0, 0}), 3.0);
    EXPECT_DOUBLE_EQ(c.at({0, 1}), 4.0);
    EXPECT_DOUBLE_EQ(c.at({1, 0}), 5.0);
}

TEST(GroupPatches, ConvexityWithEqualPatches) {
    auto a = tensor2({{0.25, 0.25, 0.25, 0.25}});
    auto v = tensor2({{2, -1}, {2, -1}, {2, -1}, {2, -1}});
    auto c = group_patches(a, v);
    EXPECT_NEAR(c.at({0, 0}), 2.0, 1e-12);
    EXPECT_NEAR(c.at({0, 1}), -1.0, 1e-12);
}

TEST(GroupPatches, MatchesMatmulOracle) {
    Rng rng(3);
    auto a = Tensor::from_data({3, 4}, rng.normal_vector(12, 1.0));
    auto v = Tensor::from_data({4, 2}, rng.normal_vector(8, 1.0));
    auto c = group_patches(a, v);
    for (int l = 0; l < 3; ++l) {
        for (int j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (int p = 0; p < 4; ++p) acc += a.at({l, p}) * v.at({p, j});
            EXPECT_NEAR(c.at({l, j}), acc, 1e-12);
        }
    }
}

TEST(FineGrainedPair, OrthonormalPairValue) {
    auto c = tensor2({{1, 0}, {0, 1}});
    const double loss = fine_grained_pair(c, c, Tensor::scalar(1.0)).item();
    EXPECT_NEAR(loss, std::log1p(std::exp(-1.0)), 1e-12);
}

TEST(FineGrainedPair, IdenticalRowsGiveLogL) {
    auto c = tensor2({{2, 1}, {2, 1}, {2, 1}});
    const double loss = fine_grained_pair(c, c, Tensor::scalar(0.7)).item();
    EXPECT_NEAR(loss, std::log(3.0), 1e-9);
}

TEST(FineGrainedPair, SingleTokenContributesZero) {
    auto c = tensor2({{0.3, -0.8}});
    EXPECT_DOUBLE_EQ(fine_grained_pair(c, c, Tensor::scalar(0.9)).item(), 0.0);
}

// ------------------------------------------------------------------ sparc ----

TEST(SparcLoss, LambdaFZeroEqualsClipExactly) {
    auto e = random_embeddings(4, 3, 5, 8, 101);
    auto batch = batch_with_mask(4, 3, {2, 3, 1, 3});
    auto params = LossParams::fixed_temperature(0.2);
    LossConfig sparc_cfg;
    sparc_cfg.variant = Objective::kSparc;
    sparc_cfg.lambda_g = 1.0;
    sparc_cfg.lambda_f = 0.0;
    LossConfig clip_cfg;
    clip_cfg.variant = Objective::kClip;
    const double a = sparc_loss(e, batch, params, sparc_cfg).total.item();
    const double b = clip_loss(e, params, clip_cfg).total.item();
    EXPECT_EQ(a, b);  // bit-for-bit
}

TEST(SparcLoss, NoSparsityEqualsSigmaZero) {
    auto e = random_embeddings(3, 4, 6, 8, 202);
    auto batch = batch_with_mask(3, 4, {4, 2, 3});
    auto params = LossParams::fixed_temperature(0.4);
    LossConfig no_sparsity;
    no_sparsity.variant = Objective::kSparcNoSparsity;
    LossConfig sigma_zero;
    sigma_zero.variant = Objective::kSparc;
    sigma_zero.sparsity_threshold = 0.0;
    const double a = sparc_loss(e, batch, params, no_sparsity).total.item();
    const double b = sparc_loss(e, batch, params, sigma_zero).total.item();
    EXPECT_EQ(a, b);
}

TEST(SparcLoss, TotalIsWeightedSumOfComponents) {
    auto e = random_embeddings(3, 3, 4, 8, 303);
    auto batch = batch_with_mask(3, 3, {3, 2, 3});
    auto params = LossParams::fixed_temperature(0.3);
    LossConfig cfg;
    cfg.variant = Objective::kSparc;
    cfg.lambda_g = 0.5;
    cfg.lambda_f = 1.0;
    auto out = sparc_loss(e, batch, params, cfg);
    const double expected = 0.5 * out.components.at("global").item() +
                            1.0 * out.components.at("fine_grained").item();
    EXPECT_NEAR(out.total.item(), expected, 1e-12);
}

TEST(SparcLoss, PerPairLocality) {
    // Pair i's fine-grained term must be identical computed alone or inside
    // a larger batch.
    auto e = random_embeddings(3, 3, 4, 8, 404);
    auto batch = batch_with_mask(3, 3, {3, 2, 3});
    auto params = LossParams::fixed_temperature(0.5);
    LossConfig cfg;
    cfg.variant = Objective::kSparc;
    auto out = sparc_loss(e, batch, params, cfg);

    for (std::int64_t i = 0; i < 3; ++i) {
        const std::int64_t valid = batch.tokens_in(i);
        Tensor t_pair = slice_rows(reshape(slice_rows(e.t, i, 1), {3, 8}), 0, valid);
        Tensor v_pair = reshape(slice_rows(e.v, i, 1), {4, 8});
        auto alignment = compute_alignment(t_pair, v_pair, 0.25, AlignmentMode::kSparseMinmax);
        Tensor grouped = group_patches(alignment.a, v_pair);
        const double standalone =
            fine_grained_pair(grouped, t_pair, Tensor::scalar(0.5)).item();
        EXPECT_EQ(standalone, out.diagnostics.at("fine_grained.pair" + std::to_string(i)));
    }
}

TEST(SparcLoss, PerturbingOtherPairLeavesPairTermUnchanged) {
    auto e = random_embeddings(3, 3, 4, 8, 505);
    auto batch = batch_with_mask(3, 3, {3, 3, 3});
    auto params = LossParams::fixed_temperature(0.5);
    LossConfig cfg;
    cfg.variant = Objective::kSparc;
    auto base = sparc_loss(e, batch, params, cfg);

    auto perturbed = e;
    std::vector<double> v2(e.v.data().begin(), e.v.data().end());
    for (int k = 0; k < 4 * 8; ++k) v2[static_cast<std::size_t>(2 * 4 * 8 + k)] += 0.7;  // pair 2
    perturbed.v = Tensor::from_data({3, 4, 8}, std::move(v2));
    auto moved = sparc_loss(perturbed, batch, params, cfg);
    EXPECT_EQ(base.diagnostics.at("fine_grained.pair0"), moved.diagnostics.at("fine_grained.pair0"));
    EXPECT_EQ(base.diagnostics.at("fine_grained.pair1"), moved.diagnostics.at("fine_grained.pair1"));
    EXPECT_NE(base.diagnostics.at("fine_grained.pair2"), moved.diagnostics.at("fine_grained.pair2"));
}

TEST(SparcLoss, CosineRescalingInvariance) {
    auto e = random_embeddings(3, 3, 4, 8, 606);
    auto batch = batch_with_mask(3, 3, {3, 2, 3});
    auto params = LossParams::fixed_temperature(0.3);
    LossConfig cfg;
    cfg.variant = Objective::kSparc;
    const double base = sparc_loss(e, batch, params, cfg).total.item();

    const double scale = 7.3;
    auto scaled = e;
    scaled.v = mul(e.v, Tensor::scalar(scale));
    scaled.t = mul(e.t, Tensor::scalar(scale));
    scaled.v_bar = mul(e.v_bar, Tensor::scalar(scale));
    scaled.t_bar = mul(e.t_bar, Tensor::scalar(scale));
    const double rescaled = sparc_loss(scaled, batch, params, cfg).total.item();
    EXPECT_NEAR(base, rescaled, 1e-9);
}

TEST(SparcLoss, UniformInputsHitLogBAndLogL) {
    auto e = uniform_embeddings(4, 3, 5, 6);
    auto batch = batch_with_mask(4, 3, {3, 3, 3, 3});
    auto params = LossParams::fixed_temperature(0.8);
    LossConfig cfg;
    cfg.variant = Objective::kSparc;
    auto out = sparc_loss(e, batch, params, cfg);
    EXPECT_NEAR(out.components.at("global").item(), std::log(4.0), 1e-9);
    EXPECT_NEAR(out.components.at("fine_grained").item(), std::log(3.0), 1e-9);
}

// -------------------------------------------------------------- baselines ----

TEST(FilipLoss, BijectiveOrthogonalCase) {
    // Pair-0 tokens equal pair-0 patches, orthogonal to pair-1; matched
    // logits 1, mismatched 0.
    const double tau = 0.5;
    EmbeddingSet e;
    e.v = Tensor::from_data({2, 2, 4}, {1, 0, 0, 0, 0, 1, 0, 0,
                                        0, 0, 1, 0, 0, 0, 0, 1});
    e.t = e.v;
    e.v_bar = tensor2({{1, 0, 0, 0}, {0, 0, 1, 0}});
    e.t_bar = e.v_bar;
    auto batch = batch_with_mask(2, 2, {2, 2});
    auto params = LossParams::fixed_temperature(tau);
    LossConfig cfg;
    cfg.variant = Objective::kFilip;
    cfg.filip_token_drop = 0.0;
    const double loss = filip_loss(e, batch, params, cfg).total.item();
    EXPECT_NEAR(loss, std::log1p(std::exp(-1.0 / tau)), 1e-9);
}

TEST(FilipLoss, UniformGivesLogB) {
    auto e = uniform_embeddings(3, 2, 4, 5);
    auto batch = batch_with_mask(3, 2, {2, 2, 2});
    auto params = LossParams::fixed_temperature(1.0);
    LossConfig cfg;
    cfg.variant = Objective::kFilip;
    cfg.filip_token_drop = 0.0;
    EXPECT_NEAR(filip_loss(e, batch, params, cfg).total.item(), std::log(3.0), 1e-9);
}

TEST(FilipLoss, TokenDropDeterministicUnderSeed) {
    auto e = random_embeddings(3, 5, 4, 6, 707);
    auto batch = batch_with_mask(3, 5, {5, 4, 5});
    auto params = LossParams::fixed_temperature(0.4);
    LossConfig cfg;
    cfg.variant = Objective::kFilip;
    cfg.filip_token_drop = 0.4;
    cfg.seed = 99;
    const double a = filip_loss(e, batch, params, cfg).total.item();
    const double b = filip_loss(e, batch, params, cfg).total.item();
    EXPECT_EQ(a, b);
    cfg.seed = 100;
    const double c = filip_loss(e, batch, params, cfg).total.item();
    EXPECT_NE(a, c);
}

TEST(FilipLoss, SingleTokenReducesToMaxOverPatches) {
    // One valid token per text and no dropping: the text-aggregated logit is
    // exactly the max-over-patches cosine.
    auto e = random_embeddings(2, 1, 4, 6, 808);
    auto batch = batch_with_mask(2, 1, {1, 1});
    auto params = LossParams::fixed_temperature(1.0);
    LossConfig cfg;
    cfg.variant = Objective::kFilip;
    cfg.filip_token_drop = 0.0;
    const double loss = filip_loss(e, batch, params, cfg).total.item();

    // Oracle: build both aggregation matrices directly.
    std::vector<std::vector<double>> m_t(2, std::vector<double>(2));
    std::vector<std::vector<double>> m_p(2, std::vector<double>(2));
    auto v_hat = l2_normalize(e.v, 2);
    auto t_hat = l2_normalize(e.t, 2);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            double best = -1e300;
            double mean_of_max = 0.0;
            for (int p = 0; p < 4; ++p) {
                double cosine = 0.0;
                for (int k = 0; k < 6; ++k) cosine += t_hat.at({j, 0, k}) * v_hat.at({i, p, k});
                best = std::max(best, cosine);
                mean_of_max += cosine;  // max over the single token is itself
            }
            m_t[i][j] = best;
            m_p[i][j] = mean_of_max / 4.0;
        }
    }
    double expected = 0.0;
    {
        // rows of image-aggregated + columns of text-aggregated, halved.
        double row_term = 0.0, col_term = 0.0;
        for (int i = 0; i < 2; ++i) {
            double row_lse = 0.0, col_lse = 0.0;
            for (int j = 0; j < 2; ++j) {
                row_lse += std::exp(m_p[i][j]);
                col_lse += std::exp(m_t[j][i]);
            }
            row_term += std::log(row_lse) - m_p[i][i];
            col_term += std::log(col_lse) - m_t[i][i];
        }
        expected = 0.5 * (row_term + col_term) / 2.0;
    }
    EXPECT_NEAR(loss, expected, 1e-9);
}

TEST(PaclLoss, IdenticalPatchesMatchGlobalOracle) {
    // All patches of image i equal u_i: pooling returns u_i regardless of the
    // weights, so logits reduce to cos(u_i, t_bar_j)/tau.
    const double tau = 0.7;
    EmbeddingSet e;
    std::vector<std::vector<double>> us = {{1, 0, 0}, {0.3, 0.9, 0}, {0, 0.2, -1}};
    std::vector<double> v;
    for (const auto& u : us) {
        for (int p = 0; p < 4; ++p) v.insert(v.end(), u.begin(), u.end());
    }
    e.v = Tensor::from_data({3, 4, 3}, std::move(v));
    e.t = Tensor::from_data({3, 2, 3}, Rng(5).normal_vector(18, 1.0));
    e.v_bar = tensor2(us);
    e.t_bar = tensor2({{0.9, 0.1, 0}, {0.2, 1, 0.1}, {0, 0, -1}});
    auto params = LossParams::fixed_temperature(tau);
    LossConfig cfg;
    cfg.variant = Objective::kPacl;
    const double loss = pacl_loss(e, params, cfg).total.item();

    auto t_hat = l2_normalize(e.t_bar, 1);
    std::vector<std::vector<double>> logits(3, std::vector<double>(3));
    for (int i = 0; i < 3; ++i) {
        double norm = 0.0;
        for (double x : us[static_cast<std::size_t>(i)]) norm += x * x;
        norm = std::sqrt(norm);
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += us[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] / norm * t_hat.at({j, k});
            logits[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = dot / tau;
        }
    }
    EXPECT_NEAR(loss, info_nce_oracle(logits), 1e-9);
}

TEST(PaclLoss, UniformGivesLogB) {
    auto e = uniform_embeddings(4, 2, 3, 5);
    auto params = LossParams::fixed_temperature(0.9);
    LossConfig cfg;
    cfg.variant = Objective::kPacl;
    EXPECT_NEAR(pacl_loss(e, params, cfg).total.item(), std::log(4.0), 1e-9);
}

TEST(GloriaLoss, ScaleFlagControlsAttentionSaturation) {
    // Large-magnitude embeddings: unscaled similarities saturate the softmax
    // (entropy < 0.01 nats); the sqrt(d) scaling keeps it meaningfully soft.
    const std::int64_t dim = 64;
    Rng rng(6);
    auto e = random_embeddings(2, 3, 4, dim, 909);
    auto scale_up = [&](const Tensor& x) { return mul(x, Tensor::scalar(3.0)); };
    e.v = scale_up(e.v);
    e.t = scale_up(e.t);
    auto batch = batch_with_mask(2, 3, {3, 3});
    auto params = LossParams::fixed_temperature(0.5);
    LossConfig scaled;
    scaled.variant = Objective::kGloria;
    scaled.gloria_scale = true;
    LossConfig unscaled = scaled;
    unscaled.gloria_scale = false;
    const double entropy_scaled =
        gloria_loss(e, batch, params, scaled).diagnostics.at("gloria.attention_entropy_mean");
    const double entropy_unscaled =
        gloria_loss(e, batch, params, unscaled).diagnostics.at("gloria.attention_entropy_mean");
    EXPECT_LT(entropy_unscaled, 0.01);
    EXPECT_GT(entropy_scaled, 0.1);
}

TEST(GloriaLoss, TokenPatchSelectionLimit) {
    // Each token matches exactly one large-magnitude patch: context snaps to
    // that patch and the matched local logit approaches 1/tau.
    const double tau = 0.5;
    EmbeddingSet e;
    const double scale = 40.0;
    e.v = Tensor::from_data({2, 2, 4}, {scale, 0, 0, 0, 0, scale, 0, 0,
                                        0, 0, scale, 0, 0, 0, 0, scale});
    e.t = e.v;
    e.v_bar = tensor2({{1, 0, 0, 0}, {0, 0, 1, 0}});
    e.t_bar = e.v_bar;
    auto batch = batch_with_mask(2, 2, {2, 2});
    auto params = LossParams::fixed_temperature(tau);
    LossConfig cfg;
    cfg.variant = Objective::kGloria;
    auto out = gloria_loss(e, batch, params, cfg);
    // matched local logits ~ 1, mismatched contexts are orthogonal -> ~0
    EXPECT_NEAR(out.components.at("local").item(), std::log1p(std::exp(-1.0 / tau)), 1e-3);
}

TEST(GloriaLoss, UniformGivesLogBPerComponent) {
    auto e = uniform_embeddings(3, 2, 4, 6);
    auto batch = batch_with_mask(3, 2, {2, 2, 2});
    auto params = LossParams::fixed_temperature(1.3);
    LossConfig cfg;
    cfg.variant = Objective::kGloria;
    auto out = gloria_loss(e, batch, params, cfg);
    EXPECT_NEAR(out.components.at("global").item(), std::log(3.0), 1e-9);
    EXPECT_NEAR(out.components.at("local").item(), std::log(3.0), 1e-9);
}

// ------------------------------------------------------------------- mgca ----

TEST(SinkhornKnopp, UniformScoresStayUniform) {
    auto codes = sinkhorn_knopp(tensor2({{1, 1}, {1, 1}}), 0.05, 3);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) EXPECT_NEAR(codes.at({i, j}), 0.5, 1e-12);
}

TEST(SinkhornKnopp, RowSumsAreOne) {
    Rng rng(8);
    auto codes = sinkhorn_knopp(Tensor::from_data({3, 2}, rng.normal_vector(6, 1.0)), 0.05, 3);
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(codes.at({i, 0}) + codes.at({i, 1}), 1.0, 1e-9);
    }
}

TEST(SinkhornKnopp, MatchesIndependentIteration) {
    // Re-run the normalization directly on plain doubles. Three rounds only
    // nearly balance the columns when scores are mild relative to eps.
    Rng rng(9);
    const int rows = 8, cols = 4;
    auto scores = Tensor::from_data({rows, cols}, rng.normal_vector(32, 0.025));
    const double eps = 0.05;
    auto codes = sinkhorn_knopp(scores, eps, 3);

    std::vector<std::vector<double>> m(rows, std::vector<double>(cols));
    for (int i = 0; i < rows; ++i) {
        double rmax = -1e300;
        for (int j = 0; j < cols; ++j) rmax = std::max(rmax, scores.at({i, j}) / eps);
        for (int j = 0; j < cols; ++j) m[i][j] = std::exp(scores.at({i, j}) / eps - rmax);
    }
    for (int it = 0; it < 3; ++it) {
        for (int j = 0; j < cols; ++j) {
            double col = 0.0;
            for (int i = 0; i < rows; ++i) col += m[i][j];
            for (int i = 0; i < rows; ++i) m[i][j] *= (static_cast<double>(rows) / cols) / col;
        }
        for (int i = 0; i < rows; ++i) {
            double row = 0.0;
            for (int j = 0; j < cols; ++j) row += m[i][j];
            for (int j = 0; j < cols; ++j) m[i][j] /= row;
        }
    }
    double max_col_dev = 0.0;
    for (int j = 0; j < cols; ++j) {
        double col = 0.0;
        for (int i = 0; i < rows; ++i) {
            EXPECT_NEAR(codes.at({i, j}), m[i][j], 1e-12);
            col += codes.at({i, j});
        }
        max_col_dev = std::max(max_col_dev, std::abs(col - static_cast<double>(rows) / cols));
    }
    EXPECT_LT(max_col_dev, 5e-2);
}

TEST(MgcaLoss, ComponentsSumWithUnitWeights) {
    auto e = random_embeddings(4, 3, 5, 8, 1111);
    auto batch = batch_with_mask(4, 3, {3, 2, 3, 3});
    LossConfig cfg;
    cfg.variant = Objective::kMgca;
    cfg.mgca.attn_dim = 8;
    cfg.mgca.num_prototypes = 6;
    auto params = LossParams::fixed_temperature(0.6);
    params.extra = init_objective_params(cfg, 8, 5);
    auto out = mgca_loss(e, batch, params, cfg);
    const double expected = out.components.at("global").item() +
                            out.components.at("token_alignment").item() +
                            out.components.at("prototype").item();
    EXPECT_NEAR(out.total.item(), expected, 1e-12);
}

TEST(MgcaLoss, AttentionSelectionLimitBeatsMismatch) {
    // Identity q/k/v projections, token equal to one scaled patch: the aligned
    // configuration yields a much smaller token component than a shuffled one.
    const std::int64_t dim = 4;
    LossConfig cfg;
    cfg.variant = Objective::kMgca;
    cfg.mgca.attn_dim = dim;
    cfg.mgca.num_prototypes = 4;
    auto params = LossParams::fixed_temperature(0.5);
    std::vector<double> eye = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    params.extra["mgca.wq"] = Tensor::from_data({4, 4}, eye);
    params.extra["mgca.wk"] = Tensor::from_data({4, 4}, eye);
    params.extra["mgca.wv"] = Tensor::from_data({4, 4}, eye);
    params.extra["mgca.prototypes"] = Tensor::from_data({4, 4}, eye);

    const double s = 20.0;
    EmbeddingSet aligned;
    aligned.v = Tensor::from_data({2, 2, 4}, {s, 0, 0, 0, 0, s, 0, 0,
                                              0, 0, s, 0, 0, 0, 0, s});
    aligned.t = aligned.v;
    aligned.v_bar = tensor2({{1, 0, 0, 0}, {0, 0, 1, 0}});
    aligned.t_bar = aligned.v_bar;

    // Tokens living in directions no patch occupies: attention has nothing to
    // select and contexts stay orthogonal to the token representations.
    EmbeddingSet mismatched = aligned;
    mismatched.t = Tensor::from_data({2, 2, 4}, {0, 0, s, 0, 0, 0, 0, s,
                                                 s, 0, 0, 0, 0, s, 0, 0});
    auto batch = batch_with_mask(2, 2, {2, 2});
    const double aligned_token =
        mgca_loss(aligned, batch, params, cfg).components.at("token_alignment").item();
    const double mismatched_token =
        mgca_loss(mismatched, batch, params, cfg).components.at("token_alignment").item();
    EXPECT_LT(aligned_token, mismatched_token);
}

TEST(MgcaLoss, UniformSequenceComponents) {
    auto e = uniform_embeddings(3, 2, 4, 6);
    auto batch = batch_with_mask(3, 2, {2, 2, 2});
    LossConfig cfg;
    cfg.variant = Objective::kMgca;
    cfg.mgca.attn_dim = 6;
    cfg.mgca.num_prototypes = 5;
    auto params = LossParams::fixed_temperature(0.8);
    params.extra = init_objective_params(cfg, 6, 3);
    auto out = mgca_loss(e, batch, params, cfg);
    EXPECT_NEAR(out.components.at("global").item(), std::log(3.0), 1e-9);
    // token side: log L_i; patch side: log P, averaged with weight 1/2 each
    EXPECT_NEAR(out.components.at("token_alignment").item(),
                0.5 * (std::log(2.0) + std::log(4.0)), 1e-9);
}

// ------------------------------------------------------------ gradchecks ----

TEST(LossGradients, SparcToyBatchPassesFiniteDifferences) {
    auto batch = batch_with_mask(2, 3, {3, 2});
    LossConfig cfg;
    cfg.variant = Objective::kSparc;
    std::vector<Tensor> inputs;
    {
        auto e = random_embeddings(2, 3, 4, 8, 1212, true);
        inputs = {e.v, e.t, e.v_bar, e.t_bar, Tensor::scalar(std::log(1.0 / 0.07), true)};
    }
    auto f = [&](std::span<const Tensor> in) {
        EmbeddingSet e{in[0], in[1], in[2], in[3]};
        LossParams params;
        params.log_temperature = in[4];
        return sparc_loss(e, batch, params, cfg).total;
    };
    GradCheckOptions options;
    options.tolerance = 1e-4;
    auto report = grad_check(f, inputs, options);
    EXPECT_TRUE(report.ok()) << "max rel err " << report.max_rel_err
                             << " failures " << report.failures.size();
}

TEST(EvaluateObjective, DispatchCoversEveryVariant) {
    auto e = random_embeddings(3, 3, 4, 8, 1313);
    auto batch = batch_with_mask(3, 3, {3, 2, 3});
    for (Objective objective : all_objectives()) {
        LossConfig cfg;
        cfg.variant = objective;
        cfg.mgca.attn_dim = 8;
        cfg.mgca.num_prototypes = 4;
        auto params = LossParams::fixed_temperature(0.5);
        params.extra = init_objective_params(cfg, 8, 11);
        auto out = evaluate_objective(e, batch, params, cfg);
        EXPECT_TRUE(all_finite(out.total)) << objective_name(objective);
        EXPECT_FALSE(out.components.empty()) << objective_name(objective);
    }
}
