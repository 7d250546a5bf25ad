#include "alignlab/encoder.hpp"

#include <cmath>

#include "alignlab/random.hpp"

namespace alignlab {

void EncoderConfig::validate() const {
    if (num_patches <= 0 || max_tokens <= 0 || vocab_size <= 0 || patch_dim <= 0 ||
        model_width <= 0 || num_heads <= 0 || shared_dim <= 0 || num_layers < 0) {
        throw ShapeError("encoder config: all dimensions must be positive");
    }
    if (model_width % num_heads != 0) {
        throw ShapeError("encoder config: model_width must be divisible by num_heads");
    }
    if (shared_dim > model_width) {
        throw ShapeError("encoder config: shared_dim must not exceed model_width");
    }
}

std::int64_t ImageTextBatch::tokens_in(std::int64_t pair) const {
    std::int64_t count = 0;
    for (std::int64_t l = 0; l < max_tokens; ++l) {
        if (token_mask[static_cast<std::size_t>(pair * max_tokens + l)] != 0) ++count;
    }
    return count;
}

void ImageTextBatch::validate(std::int64_t vocab_size) const {
    if (patches.rank() != 3 || patches.dim(0) != batch_size) {
        throw ShapeError("batch: patches must be [B, P, patch_dim]");
    }
    if (static_cast<std::int64_t>(token_ids.size()) != batch_size * max_tokens ||
        token_ids.size() != token_mask.size()) {
        throw ShapeError("batch: token buffers must be B * L_max");
    }
    for (std::int64_t b = 0; b < batch_size; ++b) {
        bool seen_zero = false;
        std::int64_t ones = 0;
        for (std::int64_t l = 0; l < max_tokens; ++l) {
            const auto m = token_mask[static_cast<std::size_t>(b * max_tokens + l)];
            if (m != 0 && m != 1) throw ShapeError("batch: mask entries must be 0/1");
            if (m == 0) {
                seen_zero = true;
            } else {
                if (seen_zero) throw ShapeError("batch: mask ones must precede zeros");
                ++ones;
                const auto id = token_ids[static_cast<std::size_t>(b * max_tokens + l)];
                if (id < 0 || id >= vocab_size) {
                    throw ShapeError("batch: token id " + std::to_string(id) +
                                     " outside vocab of " + std::to_string(vocab_size));
                }
            }
        }
        if (ones < 1) throw ShapeError("batch: every pair needs at least one valid token");
    }
}

namespace {

Tensor init_weight(Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> data(static_cast<std::size_t>(fan_in * fan_out));
    for (auto& v : data) v = rng.truncated_normal(stddev);
    return Tensor::from_data({fan_in, fan_out}, std::move(data), true);
}

Tensor init_rows(Rng& rng, std::int64_t rows, std::int64_t cols, std::int64_t fan_in) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> data(static_cast<std::size_t>(rows * cols));
    for (auto& v : data) v = rng.truncated_normal(stddev);
    return Tensor::from_data({rows, cols}, std::move(data), true);
}

void init_block(ParamMap& params, Rng& rng, const std::string& prefix, std::int64_t w) {
    params[prefix + ".ln1.g"] = Tensor::full({w}, 1.0, true);
    params[prefix + ".ln1.b"] = Tensor::zeros({w}, true);
    for (const char* name : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"}) {
        params[prefix + name] = init_weight(rng, w, w);
    }
    for (const char* name : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"}) {
        params[prefix + name] = Tensor::zeros({w}, true);
    }
    params[prefix + ".ln2.g"] = Tensor::full({w}, 1.0, true);
    params[prefix + ".ln2.b"] = Tensor::zeros({w}, true);
    params[prefix + ".mlp.w1"] = init_weight(rng, w, 4 * w);
    params[prefix + ".mlp.b1"] = Tensor::zeros({4 * w}, true);
    params[prefix + ".mlp.w2"] = init_weight(rng, 4 * w, w);
    params[prefix + ".mlp.b2"] = Tensor::zeros({w}, true);
}

const Tensor& param(const ParamMap& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("missing parameter: " + name);
    return it->second;
}

// Pre-norm transformer stack over [B, S, w]. `key_mask` (B*S 0/1, may be
// empty) removes positions from attention keys.
Tensor run_blocks(Tensor x, const ParamMap& params, const EncoderConfig& cfg,
                  const std::string& tower, std::span<const std::int64_t> key_mask) {
    const std::int64_t batch = x.dim(0);
    const std::int64_t seq = x.dim(1);
    const std::int64_t w = cfg.model_width;
    const std::int64_t heads = cfg.num_heads;
    const std::int64_t hd = w / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    for (std::int64_t layer = 0; layer < cfg.num_layers; ++layer) {
        const std::string prefix = tower + ".blk" + std::to_string(layer);
        Tensor normed = layer_norm(x, param(params, prefix + ".ln1.g"), param(params, prefix + ".ln1.b"));
        Tensor q = linear(normed, param(params, prefix + ".attn.wq"), param(params, prefix + ".attn.bq"));
        Tensor k = linear(normed, param(params, prefix + ".attn.wk"), param(params, prefix + ".attn.bk"));
        Tensor v = linear(normed, param(params, prefix + ".attn.wv"), param(params, prefix + ".attn.bv"));

        std::vector<Tensor> per_pair;
        per_pair.reserve(static_cast<std::size_t>(batch));
        for (std::int64_t b = 0; b < batch; ++b) {
            Tensor qb = reshape(slice_rows(q, b, 1), {seq, w});
            Tensor kb = reshape(slice_rows(k, b, 1), {seq, w});
            Tensor vb = reshape(slice_rows(v, b, 1), {seq, w});
            Tensor additive_mask;
            if (!key_mask.empty()) {
                std::vector<double> mask_row(static_cast<std::size_t>(seq));
                for (std::int64_t s = 0; s < seq; ++s) {
                    mask_row[static_cast<std::size_t>(s)] =
                        key_mask[static_cast<std::size_t>(b * seq + s)] != 0 ? 0.0 : -1e30;
                }
                additive_mask = Tensor::from_data({1, seq}, std::move(mask_row));
            }
            std::vector<Tensor> head_outs;
            head_outs.reserve(static_cast<std::size_t>(heads));
            for (std::int64_t h = 0; h < heads; ++h) {
                Tensor qh = slice_last(qb, h * hd, hd);
                Tensor kh = slice_last(kb, h * hd, hd);
                Tensor vh = slice_last(vb, h * hd, hd);
                Tensor scores = mul(matmul(qh, kh, false, true), Tensor::scalar(scale));
                if (additive_mask.defined()) scores = add(scores, additive_mask);
                head_outs.push_back(matmul(softmax(scores, 1), vh));
            }
            per_pair.push_back(concat_last(head_outs));
        }
        Tensor ctx = reshape(concat_rows(per_pair), {batch, seq, w});
        Tensor attn_out = linear(ctx, param(params, prefix + ".attn.wo"), param(params, prefix + ".attn.bo"));
        x = add(x, attn_out);
        Tensor normed2 = layer_norm(x, param(params, prefix + ".ln2.g"), param(params, prefix + ".ln2.b"));
        Tensor hidden = gelu(linear(normed2, param(params, prefix + ".mlp.w1"), param(params, prefix + ".mlp.b1")));
        x = add(x, linear(hidden, param(params, prefix + ".mlp.w2"), param(params, prefix + ".mlp.b2")));
    }
    return x;
}

}  // namespace

ParamMap init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ParamMap params;
    const std::int64_t w = cfg.model_width;

    params["img.proj.w"] = init_weight(rng, cfg.patch_dim, w);
    params["img.proj.b"] = Tensor::zeros({w}, true);
    if (cfg.positional_embeddings) {
        params["img.pos"] = init_rows(rng, cfg.num_patches, w, w);
    }
    for (std::int64_t layer = 0; layer < cfg.num_layers; ++layer) {
        init_block(params, rng, "img.blk" + std::to_string(layer), w);
    }
    params["img.head.w"] = init_weight(rng, w, w);
    params["img.head.b"] = Tensor::zeros({w}, true);
    params["img.adapter.w"] = init_weight(rng, w, cfg.shared_dim);
    params["img.adapter.b"] = Tensor::zeros({cfg.shared_dim}, true);

    params["txt.embed"] = init_rows(rng, cfg.vocab_size, w, w);
    if (cfg.positional_embeddings) {
        params["txt.pos"] = init_rows(rng, cfg.max_tokens, w, w);
    }
    for (std::int64_t layer = 0; layer < cfg.num_layers; ++layer) {
        init_block(params, rng, "txt.blk" + std::to_string(layer), w);
    }
    params["txt.adapter.w"] = init_weight(rng, w, cfg.shared_dim);
    params["txt.adapter.b"] = Tensor::zeros({cfg.shared_dim}, true);
    return params;
}

std::pair<Tensor, Tensor> encode_image(const Tensor& patches, const ParamMap& params,
                                       const EncoderConfig& cfg) {
    cfg.validate();
    if (patches.rank() != 3 || patches.dim(1) != cfg.num_patches ||
        patches.dim(2) != cfg.patch_dim) {
        throw ShapeError("encode_image: patches must be [B, " + std::to_string(cfg.num_patches) +
                         ", " + std::to_string(cfg.patch_dim) + "], got " +
                         shape_to_string(patches.shape()));
    }
    const std::int64_t batch = patches.dim(0);

    Tensor feats = linear(patches, param(params, "img.proj.w"), param(params, "img.proj.b"));
    if (cfg.positional_embeddings) {
        feats = add(feats, reshape(param(params, "img.pos"), {1, cfg.num_patches, cfg.model_width}));
    }
    feats = run_blocks(std::move(feats), params, cfg, "img", {});

    Tensor v = linear(feats, param(params, "img.adapter.w"), param(params, "img.adapter.b"));
    Tensor pooled = mean(feats, 1);  // [B, w]
    Tensor head = gelu(linear(pooled, param(params, "img.head.w"), param(params, "img.head.b")));
    Tensor v_bar = linear(head, param(params, "img.adapter.w"), param(params, "img.adapter.b"));
    (void)batch;
    return {v, v_bar};
}

std::pair<Tensor, Tensor> encode_text(std::span<const std::int64_t> token_ids,
                                      std::span<const std::int64_t> token_mask,
                                      std::int64_t batch_size, const ParamMap& params,
                                      const EncoderConfig& cfg) {
    cfg.validate();
    const std::int64_t seq = cfg.max_tokens;
    if (static_cast<std::int64_t>(token_ids.size()) != batch_size * seq ||
        token_ids.size() != token_mask.size()) {
        throw ShapeError("encode_text: token buffers must be B * L_max");
    }
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
        if (token_mask[i] != 0 && (token_ids[i] < 0 || token_ids[i] >= cfg.vocab_size)) {
            throw ShapeError("encode_text: token id out of vocab");
        }
    }
    // Padding slots are looked up as id 0; masked out of attention & pooling.
    std::vector<std::int64_t> safe_ids(token_ids.begin(), token_ids.end());
    for (std::size_t i = 0; i < safe_ids.size(); ++i) {
        if (token_mask[i] == 0) safe_ids[i] = 0;
    }

    Tensor feats = reshape(take_rows(param(params, "txt.embed"), safe_ids),
                           {batch_size, seq, cfg.model_width});
    if (cfg.positional_embeddings) {
        feats = add(feats, reshape(param(params, "txt.pos"), {1, seq, cfg.model_width}));
    }
    feats = run_blocks(std::move(feats), params, cfg, "txt", token_mask);

    Tensor t = linear(feats, param(params, "txt.adapter.w"), param(params, "txt.adapter.b"));

    std::vector<double> mask_values(token_mask.size());
    std::vector<double> counts(static_cast<std::size_t>(batch_size), 0.0);
    for (std::int64_t b = 0; b < batch_size; ++b) {
        for (std::int64_t l = 0; l < seq; ++l) {
            const double m = token_mask[static_cast<std::size_t>(b * seq + l)] != 0 ? 1.0 : 0.0;
            mask_values[static_cast<std::size_t>(b * seq + l)] = m;
            counts[static_cast<std::size_t>(b)] += m;
        }
    }
    Tensor mask3 = Tensor::from_data({batch_size, seq, 1}, std::move(mask_values));
    Tensor count_col = Tensor::from_data({batch_size, 1}, std::move(counts));
    Tensor pooled = divide(sum(mul(feats, mask3), 1), count_col);  // [B, w]
    Tensor t_bar = linear(pooled, param(params, "txt.adapter.w"), param(params, "txt.adapter.b"));
    return {t, t_bar};
}

EmbeddingSet encode_batch(const ImageTextBatch& batch, const ParamMap& params,
                          const EncoderConfig& cfg) {
    batch.validate(cfg.vocab_size);
    auto [v, v_bar] = encode_image(batch.patches, params, cfg);
    auto [t, t_bar] = encode_text(batch.token_ids, batch.token_mask, batch.batch_size, params, cfg);
    return EmbeddingSet{v, t, v_bar, t_bar};
}

}  // namespace alignlab
