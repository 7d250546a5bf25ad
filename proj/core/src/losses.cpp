#include "alignlab/losses.hpp"

#include <cmath>

#include "alignlab/random.hpp"

namespace alignlab {

const char* objective_name(Objective objective) {
    switch (objective) {
        case Objective::kSparc: return "sparc";
        case Objective::kSparcNoSparsity: return "sparc_no_sparsity";
        case Objective::kSparcSoftmax: return "sparc_softmax";
        case Objective::kClip: return "clip";
        case Objective::kFilip: return "filip";
        case Objective::kPacl: return "pacl";
        case Objective::kGloria: return "gloria";
        case Objective::kMgca: return "mgca";
    }
    return "unknown";
}

std::optional<Objective> objective_from_name(const std::string& name) {
    for (Objective objective : all_objectives()) {
        if (name == objective_name(objective)) return objective;
    }
    return std::nullopt;
}

std::vector<Objective> all_objectives() {
    return {Objective::kSparc, Objective::kSparcNoSparsity, Objective::kSparcSoftmax,
            Objective::kClip,  Objective::kFilip,           Objective::kPacl,
            Objective::kGloria, Objective::kMgca};
}

double LossConfig::resolve_sigma(std::int64_t num_patches) const {
    if (sparsity_threshold < 0.0) return 1.0 / static_cast<double>(num_patches);
    if (sparsity_threshold > 1.0) {
        throw NumericError("sparsity threshold must lie in [0, 1]");
    }
    return sparsity_threshold;
}

LossParams LossParams::fixed_temperature(double tau) {
    LossParams params;
    params.log_temperature = Tensor::scalar(std::log(tau), false);
    return params;
}

namespace {

Tensor temperature_of(const LossParams& params) {
    if (!params.log_temperature.defined()) {
        throw ShapeError("loss params: log_temperature not set");
    }
    return exp(params.log_temperature);
}

void require_batch_of_two(std::int64_t batch) {
    if (batch < 2) {
        throw NumericError("batch-wise contrastive loss needs B >= 2, got B = " +
                           std::to_string(batch));
    }
}

// mean_i (lse(logits[i, :]) - logits[i, i])
Tensor info_nce_rows(const Tensor& logits) {
    return mean(sub(log_sum_exp(logits, 1), diag(logits)), 0);
}

// mean_j (lse(logits[:, j]) - logits[j, j])
Tensor info_nce_cols(const Tensor& logits) {
    return mean(sub(log_sum_exp(logits, 0), diag(logits)), 0);
}

Tensor symmetric_info_nce(const Tensor& logits) {
    return mul(Tensor::scalar(0.5), add(info_nce_rows(logits), info_nce_cols(logits)));
}

Tensor pair_rows(const Tensor& batched, std::int64_t pair) {
    Shape rest(batched.shape().begin() + 1, batched.shape().end());
    return reshape(slice_rows(batched, pair, 1), std::move(rest));
}

struct SimilarityStats {
    double sum = 0.0;
    double minimum = 1e300;
    double maximum = -1e300;
    std::int64_t count = 0;

    void absorb(const Tensor& s) {
        for (double value : s.data()) {
            sum += value;
            minimum = std::min(minimum, value);
            maximum = std::max(maximum, value);
            ++count;
        }
    }
    void emit(std::map<std::string, double>& diagnostics) const {
        if (count == 0) return;
        diagnostics["similarity.mean"] = sum / static_cast<double>(count);
        diagnostics["similarity.min"] = minimum;
        diagnostics["similarity.max"] = maximum;
    }
};

double entropy_nats(std::span<const double> probabilities) {
    double h = 0.0;
    for (double p : probabilities) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

}  // namespace

Tensor global_contrastive(const Tensor& v_bar, const Tensor& t_bar, const Tensor& tau) {
    if (v_bar.rank() != 2 || t_bar.rank() != 2 || v_bar.dim(0) != t_bar.dim(0) ||
        v_bar.dim(1) != t_bar.dim(1)) {
        throw ShapeError("global_contrastive: embeddings must be [B, d] of equal shape");
    }
    require_batch_of_two(v_bar.dim(0));
    Tensor cosines = matmul(l2_normalize(v_bar, 1), l2_normalize(t_bar, 1), false, true);
    Tensor logits = divide(cosines, tau);
    return symmetric_info_nce(logits);
}

AlignmentMatrices compute_alignment(const Tensor& t_pair, const Tensor& v_pair, double sigma,
                                    AlignmentMode mode) {
    if (t_pair.rank() != 2 || v_pair.rank() != 2 || t_pair.dim(1) != v_pair.dim(1)) {
        throw ShapeError("compute_alignment: expected t [L, d] and v [P, d]");
    }
    const std::int64_t tokens = t_pair.dim(0);
    const std::int64_t patches = v_pair.dim(0);
    if (tokens < 1 || patches < 2) {
        throw ShapeError("compute_alignment: needs L >= 1 and P >= 2");
    }
    AlignmentMatrices out;
    out.s = matmul(t_pair, v_pair, false, true);  // [L, P]
    if (mode == AlignmentMode::kSoftmax) {
        out.a = softmax(out.s, 1);
        out.s_hat = out.a;
        out.s_tilde = out.a;
        return out;
    }
    if (sigma < 0.0 || sigma > 1.0) throw NumericError("sparsity threshold must lie in [0, 1]");

    Tensor row_min = min(out.s, 1, true);
    Tensor row_max = max(out.s, 1, true);
    Tensor range = sub(row_max, row_min);               // [L, 1]
    Tensor degenerate = eq_mask(range, Tensor::scalar(0.0));
    Tensor safe_range = where(degenerate, Tensor::scalar(1.0), range);
    Tensor normalized = divide(sub(out.s, row_min), safe_range);
    // Constant rows are defined as all-zero rows of s_hat with uniform a.
    out.s_hat = where(degenerate, Tensor::scalar(0.0), normalized);
    out.s_tilde = mode == AlignmentMode::kNoSparsity ? out.s_hat
                                                     : threshold_keep(out.s_hat, sigma);
    Tensor row_sum = sum(out.s_tilde, 1, true);
    Tensor safe_sum = where(degenerate, Tensor::scalar(1.0), row_sum);
    Tensor weights = divide(out.s_tilde, safe_sum);
    out.a = where(degenerate, Tensor::scalar(1.0 / static_cast<double>(patches)), weights);
    return out;
}

Tensor group_patches(const Tensor& a, const Tensor& v_pair) {
    return matmul(a, v_pair);
}

Tensor fine_grained_pair(const Tensor& c_pair, const Tensor& t_pair, const Tensor& tau) {
    if (c_pair.rank() != 2 || t_pair.rank() != 2 || c_pair.dim(0) != t_pair.dim(0)) {
        throw ShapeError("fine_grained_pair: c and t must have matching rows");
    }
    Tensor logits = divide(matmul(l2_normalize(c_pair, 1), l2_normalize(t_pair, 1), false, true), tau);
    return mul(Tensor::scalar(0.5), add(info_nce_rows(logits), info_nce_cols(logits)));
}

Tensor sinkhorn_knopp(const Tensor& scores, double eps, std::int64_t iters) {
    if (scores.rank() != 2) throw ShapeError("sinkhorn_knopp: scores must be [B, K]");
    if (iters < 1 || eps <= 0.0) throw NumericError("sinkhorn_knopp: iters >= 1 and eps > 0");
    const double rows = static_cast<double>(scores.dim(0));
    const double cols = static_cast<double>(scores.dim(1));
    Tensor z = divide(scores, Tensor::scalar(eps));
    Tensor m = exp(sub(z, max(z, 1, true)));
    const Tensor column_target = Tensor::scalar(rows / cols);
    for (std::int64_t it = 0; it < iters; ++it) {
        m = mul(divide(m, sum(m, 0, true)), column_target);
        m = divide(m, sum(m, 1, true));
    }
    return m;
}

LossOutput clip_loss(const EmbeddingSet& embeddings, const LossParams& params,
                     const LossConfig& config) {
    (void)config;
    Tensor tau = temperature_of(params);
    LossOutput out;
    out.total = global_contrastive(embeddings.v_bar, embeddings.t_bar, tau);
    out.components["global"] = out.total;
    out.diagnostics["temperature"] = tau.item();
    return out;
}

LossOutput sparc_loss(const EmbeddingSet& embeddings, const ImageTextBatch& batch,
                      const LossParams& params, const LossConfig& config) {
    AlignmentMode mode;
    switch (config.variant) {
        case Objective::kSparc: mode = AlignmentMode::kSparseMinmax; break;
        case Objective::kSparcNoSparsity: mode = AlignmentMode::kNoSparsity; break;
        case Objective::kSparcSoftmax: mode = AlignmentMode::kSoftmax; break;
        default:
            throw ShapeError("sparc_loss: variant must be one of the sparc objectives");
    }
    const std::int64_t batch_size = embeddings.v.dim(0);
    const std::int64_t patches = embeddings.v.dim(1);
    const std::int64_t dim = embeddings.v.dim(2);
    const double sigma = config.resolve_sigma(patches);

    Tensor tau = temperature_of(params);
    Tensor global = global_contrastive(embeddings.v_bar, embeddings.t_bar, tau);

    LossOutput out;
    out.diagnostics["temperature"] = tau.item();

    Tensor fine;
    if (config.lambda_f != 0.0) {
        std::vector<Tensor> pair_losses;
        pair_losses.reserve(static_cast<std::size_t>(batch_size));
        SimilarityStats stats;
        double nonzero_weights = 0.0;
        std::int64_t weight_rows = 0;
        std::int64_t single_token_pairs = 0;
        for (std::int64_t i = 0; i < batch_size; ++i) {
            const std::int64_t valid = batch.tokens_in(i);
            if (valid < 1) throw ShapeError("sparc_loss: pair with no valid tokens");
            if (valid == 1) ++single_token_pairs;
            Tensor t_pair = slice_rows(pair_rows(embeddings.t, i), 0, valid);
            Tensor v_pair = reshape(slice_rows(embeddings.v, i, 1), {patches, dim});
            AlignmentMatrices alignment = compute_alignment(t_pair, v_pair, sigma, mode);
            Tensor grouped = group_patches(alignment.a, v_pair);
            Tensor pair_loss = fine_grained_pair(grouped, t_pair, tau);
            out.diagnostics["fine_grained.pair" + std::to_string(i)] = pair_loss.item();
            pair_losses.push_back(std::move(pair_loss));

            stats.absorb(alignment.s);
            const auto weights = alignment.a.data();
            for (std::int64_t row = 0; row < valid; ++row) {
                for (std::int64_t p = 0; p < patches; ++p) {
                    if (weights[static_cast<std::size_t>(row * patches + p)] > 0.0) {
                        nonzero_weights += 1.0;
                    }
                }
            }
            weight_rows += valid;
        }
        fine = divide(pairwise_sum(pair_losses), Tensor::scalar(static_cast<double>(batch_size)));
        stats.emit(out.diagnostics);
        out.diagnostics["alignment.mean_nonzeros_per_row"] =
            weight_rows > 0 ? nonzero_weights / static_cast<double>(weight_rows) : 0.0;
        out.diagnostics["sequences.single_token"] = static_cast<double>(single_token_pairs);
    } else {
        fine = Tensor::scalar(0.0);
    }

    out.components["global"] = global;
    out.components["fine_grained"] = fine;
    Tensor weighted_global = mul(Tensor::scalar(config.lambda_g), global);
    out.total = config.lambda_f != 0.0
                    ? add(weighted_global, mul(Tensor::scalar(config.lambda_f), fine))
                    : weighted_global;
    return out;
}

LossOutput filip_loss(const EmbeddingSet& embeddings, const ImageTextBatch& batch,
                      const LossParams& params, const LossConfig& config) {
    const std::int64_t batch_size = embeddings.v.dim(0);
    require_batch_of_two(batch_size);
    const std::int64_t patches = embeddings.v.dim(1);
    const std::int64_t tokens = embeddings.t.dim(1);
    const std::int64_t dim = embeddings.v.dim(2);
    if (config.filip_token_drop < 0.0 || config.filip_token_drop >= 1.0) {
        throw NumericError("filip_token_drop must lie in [0, 1)");
    }
    Tensor tau = temperature_of(params);

    // Deterministic token dropping, sampled once per loss evaluation.
    Rng rng(derive_seed(config.seed, 0x0f111b));
    std::vector<std::vector<std::int64_t>> kept(static_cast<std::size_t>(batch_size));
    std::int64_t dropped_total = 0;
    for (std::int64_t j = 0; j < batch_size; ++j) {
        const std::int64_t valid = batch.tokens_in(j);
        std::vector<std::int64_t> indices(static_cast<std::size_t>(valid));
        for (std::int64_t l = 0; l < valid; ++l) indices[static_cast<std::size_t>(l)] = l;
        std::int64_t drop = static_cast<std::int64_t>(
            std::floor(config.filip_token_drop * static_cast<double>(valid)));
        if (valid - drop < 1) drop = valid - 1;
        rng.shuffle(indices);
        indices.resize(static_cast<std::size_t>(valid - drop));
        std::sort(indices.begin(), indices.end());
        dropped_total += drop;
        kept[static_cast<std::size_t>(j)] = std::move(indices);
    }

    std::vector<double> keep_values(static_cast<std::size_t>(batch_size * tokens), 0.0);
    std::vector<double> keep_counts(static_cast<std::size_t>(batch_size), 0.0);
    for (std::int64_t j = 0; j < batch_size; ++j) {
        for (auto l : kept[static_cast<std::size_t>(j)]) {
            keep_values[static_cast<std::size_t>(j * tokens + l)] = 1.0;
        }
        keep_counts[static_cast<std::size_t>(j)] =
            static_cast<double>(kept[static_cast<std::size_t>(j)].size());
    }
    Tensor keep3 = Tensor::from_data({batch_size, tokens, 1}, keep_values);
    Tensor keep4 = Tensor::from_data({batch_size, tokens, 1, 1}, std::move(keep_values));
    Tensor counts = Tensor::from_data({batch_size, 1}, std::move(keep_counts));

    Tensor t_hat = l2_normalize(embeddings.t, 2);
    Tensor v_hat = l2_normalize(embeddings.v, 2);
    // All cross-pair token-patch similarities at once, (text j, token l,
    // image i, patch p); this full block is what makes FILIP memory-heavy.
    Tensor sims = reshape(matmul(reshape(t_hat, {batch_size * tokens, dim}),
                                 reshape(v_hat, {batch_size * patches, dim}), false, true),
                          {batch_size, tokens, batch_size, patches});

    // Text-aggregated logits: mean over kept tokens of max over patches.
    Tensor max_over_patches = max(sims, 3);  // [j, l, i]
    Tensor text_matrix_t = divide(sum(mul(max_over_patches, keep3), 1), counts);  // [j, i]
    // Image-aggregated logits: mean over patches of max over kept tokens.
    Tensor drop_mask = mul(sub(Tensor::scalar(1.0), keep4), Tensor::scalar(-1e30));
    Tensor max_over_tokens = max(add(sims, drop_mask), 1);  // [j, i, p]
    Tensor image_matrix_t = mean(max_over_tokens, 2);       // [j, i]

    Tensor image_matrix = divide(transpose2d(image_matrix_t), tau);  // [i, j]
    Tensor text_matrix = divide(transpose2d(text_matrix_t), tau);

    LossOutput out;
    // Image anchors rank texts with image-aggregated logits; text anchors rank
    // images with token-aggregated logits. The exact pairing of aggregation to
    // direction is a reconstruction; flagged in diagnostics.
    out.total = mul(Tensor::scalar(0.5),
                    add(info_nce_rows(image_matrix), info_nce_cols(text_matrix)));
    out.components["token_contrastive"] = out.total;
    out.diagnostics["temperature"] = tau.item();
    out.diagnostics["filip.symmetrization_reconstruction"] = 1.0;
    out.diagnostics["filip.dropped_tokens"] = static_cast<double>(dropped_total);
    return out;
}

LossOutput pacl_loss(const EmbeddingSet& embeddings, const LossParams& params,
                     const LossConfig& config) {
    (void)config;
    const std::int64_t batch_size = embeddings.v.dim(0);
    require_batch_of_two(batch_size);
    const std::int64_t patches = embeddings.v.dim(1);
    const std::int64_t dim = embeddings.v.dim(2);
    Tensor tau = temperature_of(params);

    Tensor v_hat = l2_normalize(embeddings.v, 2);
    Tensor t_bar_hat = l2_normalize(embeddings.t_bar, 1);
    // cos(v_ip, t_bar_j) for every patch and caption.
    Tensor patch_text = matmul(reshape(v_hat, {batch_size * patches, dim}), t_bar_hat, false, true);

    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(batch_size));
    for (std::int64_t i = 0; i < batch_size; ++i) {
        Tensor scores = divide(slice_rows(patch_text, i * patches, patches), tau);  // [P, B]
        Tensor weights = softmax(scores, 0);
        Tensor v_pair = reshape(slice_rows(embeddings.v, i, 1), {patches, dim});
        Tensor pooled = matmul(weights, v_pair, true, false);  // [B, d], row j = v~_ij
        Tensor pooled_hat = l2_normalize(pooled, 1);
        rows.push_back(reshape(sum(mul(pooled_hat, t_bar_hat), 1), {1, batch_size}));
    }
    Tensor logits = divide(concat_rows(rows), tau);

    LossOutput out;
    out.total = symmetric_info_nce(logits);
    out.components["weighted_patch_contrastive"] = out.total;
    out.diagnostics["temperature"] = tau.item();
    return out;
}

LossOutput gloria_loss(const EmbeddingSet& embeddings, const ImageTextBatch& batch,
                       const LossParams& params, const LossConfig& config) {
    const std::int64_t batch_size = embeddings.v.dim(0);
    require_batch_of_two(batch_size);
    const std::int64_t patches = embeddings.v.dim(1);
    const std::int64_t tokens = embeddings.t.dim(1);
    const std::int64_t dim = embeddings.v.dim(2);
    Tensor tau = temperature_of(params);

    // Scaling t by sqrt(d) up front is algebraically the same as scaling the
    // similarities and avoids a second full-size similarity block.
    Tensor t_used = config.gloria_scale
                        ? divide(embeddings.t, Tensor::scalar(std::sqrt(static_cast<double>(dim))))
                        : embeddings.t;
    Tensor sims = matmul(reshape(t_used, {batch_size * tokens, dim}),
                         reshape(embeddings.v, {batch_size * patches, dim}), false, true);

    std::vector<Tensor> local_logits;
    local_logits.reserve(static_cast<std::size_t>(batch_size * batch_size));
    double entropy_sum = 0.0;
    std::int64_t entropy_rows = 0;
    for (std::int64_t i = 0; i < batch_size; ++i) {
        Tensor v_pair = reshape(slice_rows(embeddings.v, i, 1), {patches, dim});
        for (std::int64_t j = 0; j < batch_size; ++j) {
            const std::int64_t valid = batch.tokens_in(j);
            Tensor block = slice_rows(
                slice_last(slice_rows(sims, j * tokens, tokens), i * patches, patches), 0, valid);
            Tensor attention = softmax(block, 1);  // [L_j, P]
            {
                const auto probs = attention.data();
                for (std::int64_t row = 0; row < valid; ++row) {
                    entropy_sum += entropy_nats(probs.subspan(
                        static_cast<std::size_t>(row * patches), static_cast<std::size_t>(patches)));
                    ++entropy_rows;
                }
            }
            Tensor context = matmul(attention, v_pair);  // [L_j, d]
            Tensor t_pair = slice_rows(pair_rows(embeddings.t, j), 0, valid);
            Tensor cosines = sum(mul(l2_normalize(context, 1), l2_normalize(t_pair, 1)), 1);
            local_logits.push_back(mean(cosines, 0));
        }
    }
    Tensor local_matrix = divide(stack_scalars(local_logits, batch_size, batch_size), tau);

    LossOutput out;
    Tensor global = global_contrastive(embeddings.v_bar, embeddings.t_bar, tau);
    Tensor local = symmetric_info_nce(local_matrix);
    out.total = add(global, local);
    out.components["global"] = global;
    out.components["local"] = local;
    out.diagnostics["temperature"] = tau.item();
    out.diagnostics["gloria.attention_entropy_mean"] =
        entropy_rows > 0 ? entropy_sum / static_cast<double>(entropy_rows) : 0.0;
    return out;
}

LossOutput mgca_loss(const EmbeddingSet& embeddings, const ImageTextBatch& batch,
                     const LossParams& params, const LossConfig& config) {
    const std::int64_t batch_size = embeddings.v.dim(0);
    require_batch_of_two(batch_size);
    const std::int64_t patches = embeddings.v.dim(1);
    const std::int64_t dim = embeddings.v.dim(2);
    Tensor tau = temperature_of(params);

    const auto need = [&](const char* name) -> const Tensor& {
        auto it = params.extra.find(name);
        if (it == params.extra.end()) {
            throw ShapeError(std::string("mgca_loss: missing parameter ") + name);
        }
        return it->second;
    };
    const Tensor& wq = need("mgca.wq");
    const Tensor& wk = need("mgca.wk");
    const Tensor& wv = need("mgca.wv");
    const Tensor& prototypes = need("mgca.prototypes");
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(wq.dim(1)));

    Tensor global = global_contrastive(embeddings.v_bar, embeddings.t_bar, tau);

    // Token alignment: shared single-head cross-attention projections, both
    // token-to-patch and patch-to-token directions, sequence-wise InfoNCE
    // against value-projected representations within each pair.
    const auto attention_side = [&](const Tensor& queries_from, const Tensor& attended) {
        Tensor q = matmul(queries_from, wq);
        Tensor k = matmul(attended, wk);
        Tensor v = matmul(attended, wv);
        Tensor reps = matmul(queries_from, wv);
        Tensor ctx = matmul(
            softmax(mul(matmul(q, k, false, true), Tensor::scalar(attn_scale)), 1), v);
        return fine_grained_pair(ctx, reps, tau);
    };
    std::vector<Tensor> pair_losses;
    pair_losses.reserve(static_cast<std::size_t>(batch_size));
    for (std::int64_t i = 0; i < batch_size; ++i) {
        const std::int64_t valid = batch.tokens_in(i);
        Tensor t_pair = slice_rows(pair_rows(embeddings.t, i), 0, valid);
        Tensor v_pair = reshape(slice_rows(embeddings.v, i, 1), {patches, dim});
        Tensor token_side = attention_side(t_pair, v_pair);
        Tensor patch_side = attention_side(v_pair, t_pair);
        pair_losses.push_back(mul(Tensor::scalar(0.5), add(token_side, patch_side)));
    }
    Tensor token_alignment =
        divide(pairwise_sum(pair_losses), Tensor::scalar(static_cast<double>(batch_size)));

    // Prototype alignment: soft codes via Sinkhorn-Knopp, cross-entropy between
    // one modality's codes and the other's softmax assignment. Codes stay in
    // the graph; the iteration is differentiable.
    Tensor proto_hat = l2_normalize(prototypes, 1);
    Tensor v_scores = matmul(l2_normalize(embeddings.v_bar, 1), proto_hat, false, true);
    Tensor t_scores = matmul(l2_normalize(embeddings.t_bar, 1), proto_hat, false, true);
    Tensor v_codes = sinkhorn_knopp(v_scores, config.mgca.sinkhorn_eps, config.mgca.sinkhorn_iters);
    Tensor t_codes = sinkhorn_knopp(t_scores, config.mgca.sinkhorn_eps, config.mgca.sinkhorn_iters);
    Tensor v_logits = divide(v_scores, tau);
    Tensor t_logits = divide(t_scores, tau);
    Tensor v_logp = sub(v_logits, log_sum_exp(v_logits, 1, true));
    Tensor t_logp = sub(t_logits, log_sum_exp(t_logits, 1, true));
    Tensor ce_v = neg(mean(sum(mul(t_codes, v_logp), 1), 0));
    Tensor ce_t = neg(mean(sum(mul(v_codes, t_logp), 1), 0));
    Tensor prototype = mul(Tensor::scalar(0.5), add(ce_v, ce_t));

    LossOutput out;
    out.total = add(add(global, token_alignment), prototype);
    out.components["global"] = global;
    out.components["token_alignment"] = token_alignment;
    out.components["prototype"] = prototype;
    out.diagnostics["temperature"] = tau.item();
    return out;
}

LossOutput evaluate_objective(const EmbeddingSet& embeddings, const ImageTextBatch& batch,
                              const LossParams& params, const LossConfig& config) {
    switch (config.variant) {
        case Objective::kSparc:
        case Objective::kSparcNoSparsity:
        case Objective::kSparcSoftmax:
            return sparc_loss(embeddings, batch, params, config);
        case Objective::kClip:
            return clip_loss(embeddings, params, config);
        case Objective::kFilip:
            return filip_loss(embeddings, batch, params, config);
        case Objective::kPacl:
            return pacl_loss(embeddings, params, config);
        case Objective::kGloria:
            return gloria_loss(embeddings, batch, params, config);
        case Objective::kMgca:
            return mgca_loss(embeddings, batch, params, config);
    }
    throw ShapeError("evaluate_objective: unknown variant");
}

ParamMap init_objective_params(const LossConfig& config, std::int64_t shared_dim,
                               std::uint64_t seed) {
    ParamMap extra;
    if (config.variant != Objective::kMgca) return extra;
    Rng rng(derive_seed(seed, 0x9ca));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(shared_dim));
    const auto init = [&](std::int64_t rows, std::int64_t cols) {
        std::vector<double> data(static_cast<std::size_t>(rows * cols));
        for (auto& value : data) value = rng.truncated_normal(stddev);
        return Tensor::from_data({rows, cols}, std::move(data), true);
    };
    extra["mgca.wq"] = init(shared_dim, config.mgca.attn_dim);
    extra["mgca.wk"] = init(shared_dim, config.mgca.attn_dim);
    extra["mgca.wv"] = init(shared_dim, config.mgca.attn_dim);
    extra["mgca.prototypes"] = init(config.mgca.num_prototypes, shared_dim);
    return extra;
}

}  // namespace alignlab
