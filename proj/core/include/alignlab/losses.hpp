#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alignlab/encoder.hpp"
#include "alignlab/tensor.hpp"

namespace alignlab {

enum class Objective {
    kSparc,
    kSparcNoSparsity,
    kSparcSoftmax,
    kClip,
    kFilip,
    kPacl,
    kGloria,
    kMgca,
};

const char* objective_name(Objective objective);
std::optional<Objective> objective_from_name(const std::string& name);
std::vector<Objective> all_objectives();

enum class AlignmentMode { kSparseMinmax, kNoSparsity, kSoftmax };

struct MgcaConfig {
    std::int64_t num_heads = 1;
    std::int64_t attn_dim = 128;
    std::int64_t num_prototypes = 500;
    double sinkhorn_eps = 0.05;
    std::int64_t sinkhorn_iters = 3;
};

struct LossConfig {
    Objective variant = Objective::kSparc;
    double lambda_g = 0.5;
    double lambda_f = 1.0;
    // < 0 means "auto": resolves to 1/P at call time.
    double sparsity_threshold = -1.0;
    double filip_token_drop = 0.2;
    bool gloria_scale = true;
    MgcaConfig mgca;
    std::uint64_t seed = 0;  // deterministic token dropping

    double resolve_sigma(std::int64_t num_patches) const;
};

/// Temperature plus any objective-owned parameters (MGCA projections and
/// prototypes). log_temperature stores log(tau); tau = exp(log_temperature).
struct LossParams {
    Tensor log_temperature;
    ParamMap extra;

    static LossParams fixed_temperature(double tau);
};

/// Per-pair similarity pipeline for one image-text pair.
struct AlignmentMatrices {
    Tensor s;        // [L, P] raw similarities t_l . v_p
    Tensor s_hat;    // [L, P] min-max normalized per row
    Tensor s_tilde;  // [L, P] sparsified
    Tensor a;        // [L, P] alignment weights; nonzero rows sum to 1
};

struct LossOutput {
    Tensor total;
    std::map<std::string, Tensor> components;
    std::map<std::string, double> diagnostics;
};

/// Symmetric InfoNCE between pooled embeddings over the batch (cosine / tau).
Tensor global_contrastive(const Tensor& v_bar, const Tensor& t_bar, const Tensor& tau);

/// Raw similarities -> min-max row normalization -> threshold -> row
/// renormalization. Constant rows of s degrade to s_hat = 0 and uniform a.
/// kSoftmax instead takes a = softmax over patches of s (s_hat = s_tilde = a).
AlignmentMatrices compute_alignment(const Tensor& t_pair, const Tensor& v_pair, double sigma,
                                    AlignmentMode mode);

/// c_l = sum_r a_{l,r} v_r.
Tensor group_patches(const Tensor& a, const Tensor& v_pair);

/// Sequence-wise symmetric InfoNCE between c and t rows of one pair, cosine
/// similarity at temperature tau, averaged over the L rows given. A 1-row
/// pair contributes exactly zero.
Tensor fine_grained_pair(const Tensor& c_pair, const Tensor& t_pair, const Tensor& tau);

/// Exponentiate scores/eps (max-subtraction guarded), then `iters` rounds of
/// column (target B/K) then row (target 1) normalization.
Tensor sinkhorn_knopp(const Tensor& scores, double eps, std::int64_t iters);

LossOutput sparc_loss(const EmbeddingSet& embeddings, const ImageTextBatch& batch,
                      const LossParams& params, const LossConfig& config);
LossOutput clip_loss(const EmbeddingSet& embeddings, const LossParams& params,
                     const LossConfig& config);
LossOutput filip_loss(const EmbeddingSet& embeddings, const ImageTextBatch& batch,
                      const LossParams& params, const LossConfig& config);
LossOutput pacl_loss(const EmbeddingSet& embeddings, const LossParams& params,
                     const LossConfig& config);
LossOutput gloria_loss(const EmbeddingSet& embeddings, const ImageTextBatch& batch,
                       const LossParams& params, const LossConfig& config);
LossOutput mgca_loss(const EmbeddingSet& embeddings, const ImageTextBatch& batch,
                     const LossParams& params, const LossConfig& config);

LossOutput evaluate_objective(const EmbeddingSet& embeddings, const ImageTextBatch& batch,
                              const LossParams& params, const LossConfig& config);

/// Extra learnable parameters an objective needs beyond the encoders;
/// deterministic under seed. Empty for everything except MGCA.
ParamMap init_objective_params(const LossConfig& config, std::int64_t shared_dim,
                               std::uint64_t seed);

}  // namespace alignlab
