#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "alignlab/encoder.hpp"
#include "alignlab/losses.hpp"

namespace alignlab {

struct SyntheticSpec {
    std::int64_t num_concepts = 10;
    std::int64_t patches_per_concept_min = 2;
    std::int64_t patches_per_concept_max = 2;
    double noise_std = 0.02;
    double distractor_std = 1.0;  // scales the unit-norm-ish distractor draws
    // When set, leftover patch slots hold clones of concepts absent from the
    // caption (background objects) instead of pure noise. Background slots
    // are never planted.
    bool background_concepts = false;
    std::int64_t num_patches = 16;  // P
    std::int64_t max_tokens = 6;    // L_max
    std::int64_t vocab_size = 16;
    std::int64_t patch_dim = 32;
    std::uint64_t seed = 0;  // fixes the concept prototypes and token ids

    void validate() const;
};

/// Ground-truth token-position -> patch-index sets for one batch.
struct PlantedAlignment {
    // [pair][token position] -> patch indices; empty vector for padding slots.
    std::vector<std::vector<std::vector<std::int64_t>>> token_patches;
};

/// Owns the concept table (prototype vectors and token ids) drawn from
/// spec.seed; per-batch sampling is driven by the batch seed alone.
class SyntheticGenerator {
  public:
    explicit SyntheticGenerator(SyntheticSpec spec);

    std::pair<ImageTextBatch, PlantedAlignment> generate(std::int64_t batch_size,
                                                         std::uint64_t batch_seed) const;

    const SyntheticSpec& spec() const { return spec_; }
    // Concept prototypes as a [num_concepts, patch_dim] row-major buffer.
    const std::vector<double>& prototypes() const { return prototypes_; }
    std::int64_t concept_token(std::int64_t concept_index) const;

  private:
    SyntheticSpec spec_;
    std::vector<double> prototypes_;
    std::vector<std::int64_t> concept_tokens_;
};

struct RecoveryScore {
    double precision = 0.0;
    double recall = 0.0;
    // Recall restricted to tokens planted with two or more patches.
    double multi_patch_recall = 0.0;
    std::int64_t tokens_scored = 0;
    std::int64_t multi_patch_tokens = 0;
};

/// Scores predicted patch sets {p : a[l,p] > 1/(2P)} against the planted
/// sets, averaged over planted tokens of every pair.
RecoveryScore alignment_recovery_score(const std::vector<AlignmentMatrices>& per_pair,
                                       const PlantedAlignment& planted, std::int64_t num_patches);

/// Convenience: alignment matrices for every pair of a batch from raw
/// embeddings, in the given mode.
std::vector<AlignmentMatrices> batch_alignments(const EmbeddingSet& embeddings,
                                                const ImageTextBatch& batch, double sigma,
                                                AlignmentMode mode);

}  // namespace alignlab
