#include "alignlab/synthetic.hpp"

#include <cmath>
#include <stdexcept>

#include "alignlab/random.hpp"

namespace alignlab {

void SyntheticSpec::validate() const {
    if (num_concepts < 1 || num_patches < 2 || max_tokens < 1 || vocab_size < 2 || patch_dim < 1) {
        throw std::invalid_argument("synthetic spec: dimensions must be positive");
    }
    if (num_concepts + 1 > vocab_size) {
        throw std::invalid_argument("synthetic spec: concepts must fit the vocab (id 0 is padding)");
    }
    if (patches_per_concept_min < 1 || patches_per_concept_max < patches_per_concept_min) {
        throw std::invalid_argument("synthetic spec: bad patches_per_concept range");
    }
    if (noise_std < 0.0) throw std::invalid_argument("synthetic spec: noise_std must be >= 0");
}

SyntheticGenerator::SyntheticGenerator(SyntheticSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(derive_seed(spec_.seed, 0xc0cce7));
    // Random unit prototypes, Gram-Schmidt orthonormalized while they fit in
    // the patch space. Separable concepts keep the planted structure
    // identifiable; without this, cross-concept similarities of random
    // directions (~1/sqrt(d)) survive the alignment threshold and recovery
    // precision is capped far below 1 even for perfect embeddings.
    const std::int64_t dim = spec_.patch_dim;
    prototypes_.resize(static_cast<std::size_t>(spec_.num_concepts * dim));
    for (std::int64_t c = 0; c < spec_.num_concepts; ++c) {
        std::vector<double> raw(static_cast<std::size_t>(dim));
        for (auto& v : raw) v = rng.normal();
        if (c < dim) {
            for (std::int64_t prev = 0; prev < c; ++prev) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < dim; ++j) {
                    dot += raw[static_cast<std::size_t>(j)] *
                           prototypes_[static_cast<std::size_t>(prev * dim + j)];
                }
                for (std::int64_t j = 0; j < dim; ++j) {
                    raw[static_cast<std::size_t>(j)] -=
                        dot * prototypes_[static_cast<std::size_t>(prev * dim + j)];
                }
            }
        }
        double norm = 0.0;
        for (double v : raw) norm += v * v;
        norm = std::sqrt(norm);
        for (std::int64_t j = 0; j < dim; ++j) {
            prototypes_[static_cast<std::size_t>(c * dim + j)] =
                raw[static_cast<std::size_t>(j)] / norm;
        }
    }
    // Token id 0 is reserved for padding.
    concept_tokens_.resize(static_cast<std::size_t>(spec_.num_concepts));
    for (std::int64_t c = 0; c < spec_.num_concepts; ++c) {
        concept_tokens_[static_cast<std::size_t>(c)] = 1 + c;
    }
}

std::int64_t SyntheticGenerator::concept_token(std::int64_t concept_index) const {
    return concept_tokens_.at(static_cast<std::size_t>(concept_index));
}

std::pair<ImageTextBatch, PlantedAlignment> SyntheticGenerator::generate(
    std::int64_t batch_size, std::uint64_t batch_seed) const {
    if (batch_size < 1) throw std::invalid_argument("generate: batch_size >= 1");
    Rng rng(derive_seed(spec_.seed ^ 0x5e5e5e5e5e5e5e5eULL, batch_seed));

    const std::int64_t patches = spec_.num_patches;
    const std::int64_t max_tokens = spec_.max_tokens;
    const std::int64_t dim = spec_.patch_dim;
    const double distractor_scale = spec_.distractor_std / std::sqrt(static_cast<double>(dim));

    ImageTextBatch batch;
    batch.batch_size = batch_size;
    batch.max_tokens = max_tokens;
    batch.token_ids.assign(static_cast<std::size_t>(batch_size * max_tokens), 0);
    batch.token_mask.assign(static_cast<std::size_t>(batch_size * max_tokens), 0);
    std::vector<double> patch_data(static_cast<std::size_t>(batch_size * patches * dim), 0.0);

    PlantedAlignment planted;
    planted.token_patches.assign(
        static_cast<std::size_t>(batch_size),
        std::vector<std::vector<std::int64_t>>(static_cast<std::size_t>(max_tokens)));

    for (std::int64_t b = 0; b < batch_size; ++b) {
        // Cap concepts per pair by the worst-case patch budget so valid specs
        // cannot trip the overfull error mid-run.
        std::int64_t max_concepts = std::min(max_tokens, spec_.num_concepts);
        max_concepts = std::min(max_concepts, patches / spec_.patches_per_concept_max);
        const std::int64_t used = max_concepts >= 2 ? rng.uniform_int(2, max_concepts) : 1;

        std::vector<std::int64_t> pool(static_cast<std::size_t>(spec_.num_concepts));
        for (std::int64_t c = 0; c < spec_.num_concepts; ++c) pool[static_cast<std::size_t>(c)] = c;
        rng.shuffle(pool);
        pool.resize(static_cast<std::size_t>(used));

        std::vector<std::int64_t> counts(static_cast<std::size_t>(used));
        std::int64_t total = 0;
        for (std::int64_t i = 0; i < used; ++i) {
            counts[static_cast<std::size_t>(i)] =
                rng.uniform_int(spec_.patches_per_concept_min, spec_.patches_per_concept_max);
            total += counts[static_cast<std::size_t>(i)];
        }
        if (total > patches) {
            throw std::runtime_error("generate: planted patches exceed the patch budget (" +
                                     std::to_string(total) + " > " + std::to_string(patches) + ")");
        }

        std::vector<std::int64_t> slots(static_cast<std::size_t>(patches));
        for (std::int64_t p = 0; p < patches; ++p) slots[static_cast<std::size_t>(p)] = p;
        rng.shuffle(slots);

        std::size_t cursor = 0;
        for (std::int64_t i = 0; i < used; ++i) {
            const std::int64_t concept_id = pool[static_cast<std::size_t>(i)];
            batch.token_ids[static_cast<std::size_t>(b * max_tokens + i)] =
                concept_tokens_[static_cast<std::size_t>(concept_id)];
            batch.token_mask[static_cast<std::size_t>(b * max_tokens + i)] = 1;
            for (std::int64_t copy = 0; copy < counts[static_cast<std::size_t>(i)]; ++copy) {
                const std::int64_t slot = slots[cursor++];
                planted.token_patches[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)]
                    .push_back(slot);
                for (std::int64_t j = 0; j < dim; ++j) {
                    patch_data[static_cast<std::size_t>((b * patches + slot) * dim + j)] =
                        prototypes_[static_cast<std::size_t>(concept_id * dim + j)] +
                        spec_.noise_std * rng.normal();
                }
            }
        }
        // Remaining slots are distractors, never planted: either pure noise
        // or clones of concepts the caption does not mention.
        std::vector<std::int64_t> unnamed;
        if (spec_.background_concepts) {
            for (std::int64_t c = 0; c < spec_.num_concepts; ++c) {
                bool named = false;
                for (std::int64_t i = 0; i < used; ++i) {
                    if (pool[static_cast<std::size_t>(i)] == c) named = true;
                }
                if (!named) unnamed.push_back(c);
            }
        }
        for (; cursor < slots.size(); ++cursor) {
            const std::int64_t slot = slots[cursor];
            if (!unnamed.empty()) {
                const std::int64_t concept_id =
                    unnamed[static_cast<std::size_t>(rng.uniform_int(
                        0, static_cast<std::int64_t>(unnamed.size()) - 1))];
                for (std::int64_t j = 0; j < dim; ++j) {
                    patch_data[static_cast<std::size_t>((b * patches + slot) * dim + j)] =
                        prototypes_[static_cast<std::size_t>(concept_id * dim + j)] +
                        spec_.noise_std * rng.normal();
                }
            } else {
                for (std::int64_t j = 0; j < dim; ++j) {
                    patch_data[static_cast<std::size_t>((b * patches + slot) * dim + j)] =
                        distractor_scale * rng.normal();
                }
            }
        }
    }
    batch.patches = Tensor::from_data({batch_size, patches, dim}, std::move(patch_data));
    return {std::move(batch), std::move(planted)};
}

RecoveryScore alignment_recovery_score(const std::vector<AlignmentMatrices>& per_pair,
                                       const PlantedAlignment& planted,
                                       std::int64_t num_patches) {
    const double threshold = 1.0 / (2.0 * static_cast<double>(num_patches));
    RecoveryScore score;
    double precision_sum = 0.0, recall_sum = 0.0, multi_recall_sum = 0.0;
    for (std::size_t pair = 0; pair < per_pair.size(); ++pair) {
        const auto& weights = per_pair[pair].a;
        const auto& sets = planted.token_patches.at(pair);
        const std::int64_t rows = weights.dim(0);
        for (std::int64_t l = 0; l < rows; ++l) {
            const auto& truth = sets.at(static_cast<std::size_t>(l));
            if (truth.empty()) continue;
            std::int64_t predicted = 0, hits = 0;
            for (std::int64_t p = 0; p < num_patches; ++p) {
                if (weights.at({l, p}) > threshold) {
                    ++predicted;
                    for (auto candidate : truth) {
                        if (candidate == p) {
                            ++hits;
                            break;
                        }
                    }
                }
            }
            const double precision =
                predicted > 0 ? static_cast<double>(hits) / static_cast<double>(predicted) : 0.0;
            const double recall = static_cast<double>(hits) / static_cast<double>(truth.size());
            precision_sum += precision;
            recall_sum += recall;
            ++score.tokens_scored;
            if (truth.size() >= 2) {
                multi_recall_sum += recall;
                ++score.multi_patch_tokens;
            }
        }
    }
    if (score.tokens_scored > 0) {
        score.precision = precision_sum / static_cast<double>(score.tokens_scored);
        score.recall = recall_sum / static_cast<double>(score.tokens_scored);
    }
    if (score.multi_patch_tokens > 0) {
        score.multi_patch_recall = multi_recall_sum / static_cast<double>(score.multi_patch_tokens);
    }
    return score;
}

std::vector<AlignmentMatrices> batch_alignments(const EmbeddingSet& embeddings,
                                                const ImageTextBatch& batch, double sigma,
                                                AlignmentMode mode) {
    NoGradGuard no_grad;
    const std::int64_t batch_size = embeddings.v.dim(0);
    const std::int64_t patches = embeddings.v.dim(1);
    const std::int64_t dim = embeddings.v.dim(2);
    std::vector<AlignmentMatrices> out;
    out.reserve(static_cast<std::size_t>(batch_size));
    for (std::int64_t i = 0; i < batch_size; ++i) {
        const std::int64_t valid = batch.tokens_in(i);
        Tensor t_pair = slice_rows(
            reshape(slice_rows(embeddings.t, i, 1), {batch.max_tokens, dim}), 0, valid);
        Tensor v_pair = reshape(slice_rows(embeddings.v, i, 1), {patches, dim});
        out.push_back(compute_alignment(t_pair, v_pair, sigma, mode));
    }
    return out;
}

}  // namespace alignlab
