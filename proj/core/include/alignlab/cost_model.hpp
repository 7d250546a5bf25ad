#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alignlab/encoder.hpp"
#include "alignlab/losses.hpp"

namespace alignlab {

struct CostDims {
    std::int64_t batch = 0;    // B
    std::int64_t tokens = 0;   // L (all sequences full length)
    std::int64_t patches = 0;  // P
    std::int64_t dim = 0;      // d
};

/// Fixed knobs the sweep holds constant: the shared encoder plus the
/// objective-specific extras at desk scale.
struct CostProfile {
    EncoderConfig encoder;
    MgcaConfig mgca;
    double filip_token_drop = 0.0;  // full sequences give clean counts

    static CostProfile desk_default();
    // Applies `dims` onto the encoder fields (P, L_max, shared_dim).
    EncoderConfig encoder_for(const CostDims& dims) const;
    LossConfig loss_config_for(Objective objective) const;
};

struct CostEntry {
    std::string objective;
    CostDims dims;
    std::uint64_t encoder_mults = 0;
    std::uint64_t loss_mults = 0;
    std::uint64_t flops_forward = 0;  // encoder + loss forward multiplies
    std::uint64_t flops_total = 0;    // forward + backward modeled as 2x forward
    std::uint64_t peak_bytes = 0;     // loss-phase live-set high-water mark
};

/// Closed-form multiply counts mirroring the implementation: a shared
/// encoder term plus per-objective loss terms. Peak bytes follow a live-set
/// model of the same streaming execution measured_cost uses.
CostEntry analytic_cost(Objective objective, const CostDims& dims, const CostProfile& profile);

/// Closed-form loss-only dominant-term multiplies (no encoder share).
std::uint64_t analytic_loss_mults(Objective objective, const CostDims& dims,
                                  const CostProfile& profile);

/// Runs the real pipeline forward (no grad graph): synthetic batch ->
/// encoders -> objective. Multiplies are read from the OpCounter per phase;
/// peak bytes are tracked from the start of the loss phase.
CostEntry measured_cost(Objective objective, const CostDims& dims, const CostProfile& profile,
                        std::uint64_t seed);

/// Loss-only instrumented run on random embeddings (no encoder).
CostEntry measured_loss_cost(Objective objective, const CostDims& dims,
                             const CostProfile& profile, std::uint64_t seed);

struct CostSweep {
    std::vector<CostEntry> measured;
    std::vector<CostEntry> analytic;
};

CostSweep run_cost_sweep(const std::vector<Objective>& objectives,
                         const std::vector<std::int64_t>& batch_sizes, const CostDims& base,
                         const CostProfile& profile, std::uint64_t seed);

/// CSV columns: objective, B, L, P, d, flops, peak_bytes.
std::string cost_entries_to_csv(const std::vector<CostEntry>& entries);

}  // namespace alignlab
