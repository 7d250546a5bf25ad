#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace alignlab {

struct DynamicsReport {
    std::int64_t k = 0;
    double grad_scale_expected = 0.0;       // 1/k^2
    double grad_scale_measured = 0.0;       // mean |off-diagonal Jacobian entry|
    double selected_grad_measured = 0.0;    // mean diagonal entry
    std::vector<double> entropy_trace;      // nats
    std::vector<double> corner_distance_trace;  // 1 - max(a)
    std::int64_t converged_corner = -1;
};

struct GradScaleSweep {
    std::vector<DynamicsReport> per_k;
    double loglog_slope = 0.0;  // least-squares slope of log(measured) vs log(k)
};

/// Dense softmax Jacobian: J[i][i] = a_i - a_i^2, J[i][j] = -a_i a_j.
/// Row-major k*k buffer.
std::vector<double> softmax_jacobian(std::span<const double> logits);

/// Draws near-zero logits (stddev `logit_scale`) and measures the average
/// off-diagonal Jacobian magnitude against the 1/k^2 prediction.
/// trials = 0 evaluates the exactly-uniform point instead of sampling.
DynamicsReport uniform_init_grad_scale(std::int64_t k, std::int64_t trials, std::uint64_t seed,
                                       double logit_scale = 0.01);

GradScaleSweep grad_scale_sweep(std::span<const std::int64_t> ks, std::int64_t trials,
                                std::uint64_t seed);

/// Iterates h <- gain * k * softmax(h). gain must exceed 1; the uniform point
/// is a fixed point and any strict maximum is driven to its simplex corner.
/// This logit-gain reinforcement is the lab's concrete repeated-softmax
/// system.
DynamicsReport iterate_softmax(std::span<const double> initial_logits, std::int64_t steps,
                               double gain);

}  // namespace alignlab
