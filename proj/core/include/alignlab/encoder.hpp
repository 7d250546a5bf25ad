#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "alignlab/tensor.hpp"

namespace alignlab {

struct EncoderConfig {
    std::int64_t num_patches = 16;     // P
    std::int64_t max_tokens = 6;       // L_max
    std::int64_t vocab_size = 32;
    std::int64_t patch_dim = 32;
    std::int64_t model_width = 32;
    std::int64_t num_layers = 0;
    std::int64_t num_heads = 1;
    std::int64_t shared_dim = 32;      // d
    bool positional_embeddings = true;

    void validate() const;
};

/// B paired items: pre-extracted patch feature grids, token id sequences and
/// a per-item validity mask where all ones precede all zeros.
struct ImageTextBatch {
    Tensor patches;                    // [B, P, patch_dim]
    std::vector<std::int64_t> token_ids;   // B * L_max, row-major
    std::vector<std::int64_t> token_mask;  // 0/1, same layout
    std::int64_t batch_size = 0;
    std::int64_t max_tokens = 0;

    std::int64_t tokens_in(std::int64_t pair) const;  // L_i
    void validate(std::int64_t vocab_size) const;
};

struct EmbeddingSet {
    Tensor v;      // [B, P, d] patch embeddings
    Tensor t;      // [B, L_max, d] token embeddings
    Tensor v_bar;  // [B, d] global image embeddings
    Tensor t_bar;  // [B, d] global text embeddings
};

using ParamMap = std::map<std::string, Tensor>;

/// Deterministic for a given seed. Linear weights are truncated-normal with
/// stddev 1/sqrt(fan_in); biases and LayerNorm betas zero, gammas one.
ParamMap init_encoder_params(const EncoderConfig& config, std::uint64_t seed);

/// Patch tower: linear projection + pre-norm transformer blocks (f_v), then
/// the shared adapter g_v per patch; the global path mean-pools the trunk
/// features, applies the single non-linear head h_v, then g_v again.
std::pair<Tensor, Tensor> encode_image(const Tensor& patches, const ParamMap& params,
                                       const EncoderConfig& config);

/// Token tower: embedding table + bidirectional blocks restricted by the
/// mask (f_t), adapter g_t per token; the global path mean-pools trunk
/// features over valid positions only, then applies g_t.
std::pair<Tensor, Tensor> encode_text(std::span<const std::int64_t> token_ids,
                                      std::span<const std::int64_t> token_mask,
                                      std::int64_t batch_size, const ParamMap& params,
                                      const EncoderConfig& config);

EmbeddingSet encode_batch(const ImageTextBatch& batch, const ParamMap& params,
                          const EncoderConfig& config);

}  // namespace alignlab
