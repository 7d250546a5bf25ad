#include "alignlab/cost_model.hpp"

#include <algorithm>
#include <sstream>

#include "alignlab/random.hpp"
#include "alignlab/synthetic.hpp"

namespace alignlab {

CostProfile CostProfile::desk_default() {
    CostProfile profile;
    profile.encoder.num_patches = 8;
    profile.encoder.max_tokens = 2;
    profile.encoder.vocab_size = 64;
    profile.encoder.patch_dim = 32;
    profile.encoder.model_width = 48;
    profile.encoder.num_layers = 1;
    profile.encoder.num_heads = 2;
    profile.encoder.shared_dim = 32;
    profile.encoder.positional_embeddings = false;
    profile.mgca.attn_dim = 4;
    profile.mgca.num_prototypes = 4;
    profile.mgca.sinkhorn_eps = 0.05;
    profile.mgca.sinkhorn_iters = 3;
    return profile;
}

EncoderConfig CostProfile::encoder_for(const CostDims& dims) const {
    EncoderConfig cfg = encoder;
    cfg.num_patches = dims.patches;
    cfg.max_tokens = dims.tokens;
    cfg.shared_dim = dims.dim;
    return cfg;
}

LossConfig CostProfile::loss_config_for(Objective objective) const {
    LossConfig cfg;
    cfg.variant = objective;
    cfg.mgca = mgca;
    cfg.filip_token_drop = filip_token_drop;
    return cfg;
}

namespace {

using U = std::uint64_t;

U u(std::int64_t value) { return static_cast<U>(value); }

// Forward multiplies of both encoder towers, term for term with the
// implementation (linear layers, pre-norm blocks, adapters, pooling).
U encoder_forward_mults(const EncoderConfig& cfg, std::int64_t batch) {
    const U b = u(batch);
    const U p = u(cfg.num_patches);
    const U l = u(cfg.max_tokens);
    const U w = u(cfg.model_width);
    const U pd = u(cfg.patch_dim);
    const U d = u(cfg.shared_dim);
    const U h = u(cfg.num_heads);
    const U layers = u(cfg.num_layers);

    const auto tower_layers = [&](U s) {
        // 2x layer_norm (3sw each), qkv + out projections (4sww), attention
        // scores/apply (2s^2 w), per-head scale + softmax (2hs^2), MLP
        // (8sww + 12sw gelu).
        return layers * b * (12 * s * w * w + 2 * s * s * w + 2 * h * s * s + 18 * s * w);
    };
    U total = 0;
    // image tower
    total += b * p * pd * w;          // patch projection
    total += tower_layers(p);
    total += b * p * w * d;           // per-patch adapter
    total += b * w;                   // mean pool divide
    total += b * w * w + 3 * b * w;   // non-linear head (linear + gelu)
    total += b * w * d;               // pooled adapter
    // text tower
    total += tower_layers(l);
    total += b * l * w * d;           // per-token adapter
    total += b * l * w + b * w;       // masked pooling (mask multiply + divide)
    total += b * w * d;               // pooled adapter
    return total;
}

U global_term_mults(const CostDims& dims) {
    const U b = u(dims.batch);
    const U d = u(dims.dim);
    // two 2Bd normalizations, BxB cosine matmul, temperature divide, means.
    return 4 * b * d + b * b * d + b * b + 3;
}

}  // namespace

std::uint64_t analytic_loss_mults(Objective objective, const CostDims& dims,
                                  const CostProfile& profile) {
    const U b = u(dims.batch);
    const U l = u(dims.tokens);
    const U p = u(dims.patches);
    const U d = u(dims.dim);
    switch (objective) {
        case Objective::kClip:
            return global_term_mults(dims);
        case Objective::kSparc:
        case Objective::kSparcNoSparsity:
        case Objective::kSparcSoftmax: {
            // per pair: similarity LPd, min-max + renormalize 2LP, grouping
            // LPd, pair norms 4Ld, sequence logits L^2 d + L^2 divide.
            const U pair = 2 * l * p * d + 2 * l * p + 4 * l * d + l * l * d + l * l + 6;
            return global_term_mults(dims) + b * pair + 5;
        }
        case Objective::kFilip:
            // token/patch norms, the B^2 LPd cross-batch similarity block,
            // masked means and temperature divides.
            return 2 * b * (l + p) * d + b * b * l * p * d + b * b * (l + 4) + b * l + 4;
        case Objective::kPacl:
            // patch-text similarities B^2 Pd, weighted pooling B^2 Pd,
            // per-image softmax 2B^2 P, pooled norms and cosines 3B^2 d.
            return 2 * b * p * d + 2 * b * d + 2 * b * b * p * d + 2 * b * b * p +
                   3 * b * b * d + b * b + 3;
        case Objective::kGloria: {
            // similarity block B^2 LPd, per-(i,j) attention softmax LP,
            // context LPd, norms/cosines 5Ld.
            const U per_ij = l * p + l * p * d + 5 * l * d + 1;
            return global_term_mults(dims) + b * l * d + b * b * l * p * d +
                   b * b * per_ij + b * b + 3;
        }
        case Objective::kMgca: {
            const U a = u(profile.mgca.attn_dim);
            const U k = u(profile.mgca.num_prototypes);
            const U iters = u(profile.mgca.sinkhorn_iters);
            const U pair = d * a * (4 * l + 4 * p) + 4 * l * p * a + 4 * l * p +
                           4 * (l + p) * a + (l * l + p * p) * a + l * l + p * p + 10;
            const U proto = 2 * k * d + 4 * b * d + 2 * b * d * k +
                            2 * b * k * (1 + 3 * iters) + 4 * b * k + 8;
            return global_term_mults(dims) + b * pair + proto + 6;
        }
    }
    return 0;
}

CostEntry analytic_cost(Objective objective, const CostDims& dims, const CostProfile& profile) {
    CostEntry entry;
    entry.objective = objective_name(objective);
    entry.dims = dims;
    entry.encoder_mults = encoder_forward_mults(profile.encoder_for(dims), dims.batch);
    entry.loss_mults = analytic_loss_mults(objective, dims, profile);
    entry.flops_forward = entry.encoder_mults + entry.loss_mults;
    entry.flops_total = 3 * entry.flops_forward;

    // Live-set model of the streaming loss phase, in elements: inputs (batch
    // patches + embedding set) plus the objective's resident blocks and the
    // largest per-pair transient.
    const U b = u(dims.batch);
    const U l = u(dims.tokens);
    const U p = u(dims.patches);
    const U d = u(dims.dim);
    const U pd = u(profile.encoder.patch_dim);
    const U base = b * (p * pd + p * d + l * d + 2 * d);
    const U clip_extra = 2 * b * d + 3 * b * b + 8;
    U extra = 0;
    switch (objective) {
        case Objective::kClip:
            extra = clip_extra;
            break;
        case Objective::kSparc:
        case Objective::kSparcNoSparsity:
        case Objective::kSparcSoftmax:
            extra = clip_extra + 2 * l * p + 2 * l + 3 * l * d + 3 * l * l + 8;
            break;
        case Objective::kFilip:
            extra = b * (l + p) * d + 3 * b * b * l * p + b * b * (l + p) + 3 * b * b + b * l + 8;
            break;
        case Objective::kGloria:
            extra = clip_extra + b * l * d + b * b * l * p + 2 * l * p + 3 * l * d + l + 8;
            break;
        case Objective::kMgca: {
            const U a = u(profile.mgca.attn_dim);
            const U k = u(profile.mgca.num_prototypes);
            const U token_side = (2 * l + 2 * p) * a + 2 * l * p + 4 * l * a + 3 * l * l;
            const U patch_side = (2 * l + 2 * p) * a + 2 * l * p + 4 * p * a + 3 * p * p;
            const U proto = k * d + 2 * b * d + 6 * b * k;
            extra = clip_extra + std::max(token_side, patch_side) + proto;
            break;
        }
        case Objective::kPacl:
            extra = b * p * d + b * d + b * b * p + 2 * p * b + 3 * b * d + b * b + 8;
            break;
    }
    entry.peak_bytes = (base + extra) * u(OpCounter::get().bytes_per_element);
    return entry;
}

namespace {

CostEntry instrumented_run(Objective objective, const CostDims& dims, const CostProfile& profile,
                           std::uint64_t seed, bool include_encoder) {
    NoGradGuard no_grad;
    auto& counter = OpCounter::get();

    LossConfig loss_cfg = profile.loss_config_for(objective);
    loss_cfg.seed = seed;
    LossParams params = LossParams::fixed_temperature(0.07);
    params.extra = init_objective_params(loss_cfg, dims.dim, derive_seed(seed, 7));

    CostEntry entry;
    entry.objective = objective_name(objective);
    entry.dims = dims;

    EmbeddingSet embeddings;
    ImageTextBatch batch;
    if (include_encoder) {
        const EncoderConfig enc_cfg = profile.encoder_for(dims);
        SyntheticSpec spec;
        spec.num_concepts = std::min<std::int64_t>(dims.tokens, enc_cfg.vocab_size - 1);
        spec.patches_per_concept_min = 1;
        spec.patches_per_concept_max = 1;
        spec.num_patches = dims.patches;
        spec.max_tokens = dims.tokens;
        spec.vocab_size = enc_cfg.vocab_size;
        spec.patch_dim = enc_cfg.patch_dim;
        spec.seed = seed;
        SyntheticGenerator generator(spec);
        batch = generator.generate(dims.batch, derive_seed(seed, 1)).first;
        // Cost runs use full-length sequences for clean counts.
        for (auto& m : batch.token_mask) m = 1;
        for (auto& id : batch.token_ids) id = std::max<std::int64_t>(id, 1);

        ParamMap enc_params = init_encoder_params(enc_cfg, derive_seed(seed, 2));
        counter.reset();
        embeddings = encode_batch(batch, enc_params, enc_cfg);
        entry.encoder_mults = counter.mults;
    } else {
        Rng rng(derive_seed(seed, 3));
        embeddings.v = Tensor::from_data(
            {dims.batch, dims.patches, dims.dim},
            rng.normal_vector(static_cast<std::size_t>(dims.batch * dims.patches * dims.dim), 1.0));
        embeddings.t = Tensor::from_data(
            {dims.batch, dims.tokens, dims.dim},
            rng.normal_vector(static_cast<std::size_t>(dims.batch * dims.tokens * dims.dim), 1.0));
        embeddings.v_bar = Tensor::from_data(
            {dims.batch, dims.dim},
            rng.normal_vector(static_cast<std::size_t>(dims.batch * dims.dim), 1.0));
        embeddings.t_bar = Tensor::from_data(
            {dims.batch, dims.dim},
            rng.normal_vector(static_cast<std::size_t>(dims.batch * dims.dim), 1.0));
        batch.batch_size = dims.batch;
        batch.max_tokens = dims.tokens;
        batch.token_ids.assign(static_cast<std::size_t>(dims.batch * dims.tokens), 1);
        batch.token_mask.assign(static_cast<std::size_t>(dims.batch * dims.tokens), 1);
    }

    counter.reset();  // peak restarts from the currently live inputs
    LossOutput out = evaluate_objective(embeddings, batch, params, loss_cfg);
    entry.loss_mults = counter.mults;
    entry.peak_bytes = counter.peak_live_bytes;
    entry.flops_forward = entry.encoder_mults + entry.loss_mults;
    entry.flops_total = 3 * entry.flops_forward;
    (void)out;
    return entry;
}

}  // namespace

CostEntry measured_cost(Objective objective, const CostDims& dims, const CostProfile& profile,
                        std::uint64_t seed) {
    return instrumented_run(objective, dims, profile, seed, true);
}

CostEntry measured_loss_cost(Objective objective, const CostDims& dims,
                             const CostProfile& profile, std::uint64_t seed) {
    return instrumented_run(objective, dims, profile, seed, false);
}

CostSweep run_cost_sweep(const std::vector<Objective>& objectives,
                         const std::vector<std::int64_t>& batch_sizes, const CostDims& base,
                         const CostProfile& profile, std::uint64_t seed) {
    CostSweep sweep;
    for (Objective objective : objectives) {
        for (std::int64_t batch : batch_sizes) {
            CostDims dims = base;
            dims.batch = batch;
            sweep.measured.push_back(measured_cost(objective, dims, profile, seed));
            sweep.analytic.push_back(analytic_cost(objective, dims, profile));
        }
    }
    return sweep;
}

std::string cost_entries_to_csv(const std::vector<CostEntry>& entries) {
    std::ostringstream out;
    out << "objective,B,L,P,d,flops,peak_bytes\n";
    for (const auto& entry : entries) {
        out << entry.objective << ',' << entry.dims.batch << ',' << entry.dims.tokens << ','
            << entry.dims.patches << ',' << entry.dims.dim << ',' << entry.flops_total << ','
            << entry.peak_bytes << "\n";
    }
    return out.str();
}

}  // namespace alignlab
