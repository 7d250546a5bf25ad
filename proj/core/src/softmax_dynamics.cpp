#include "alignlab/softmax_dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "alignlab/random.hpp"

namespace alignlab {

namespace {

std::vector<double> softmax_values(std::span<const double> logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> out(logits.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        denom += out[i];
    }
    for (auto& v : out) v /= denom;
    return out;
}

double entropy_nats(std::span<const double> probabilities) {
    double h = 0.0;
    for (double p : probabilities) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

}  // namespace

std::vector<double> softmax_jacobian(std::span<const double> logits) {
    if (logits.size() < 2) throw std::invalid_argument("softmax_jacobian: k >= 2 required");
    const auto a = softmax_values(logits);
    const std::size_t k = a.size();
    std::vector<double> jac(k * k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            jac[i * k + j] = i == j ? a[i] - a[i] * a[i] : -a[i] * a[j];
        }
    }
    return jac;
}

DynamicsReport uniform_init_grad_scale(std::int64_t k, std::int64_t trials, std::uint64_t seed,
                                       double logit_scale) {
    if (k < 2) throw std::invalid_argument("uniform_init_grad_scale: k >= 2 required");
    DynamicsReport report;
    report.k = k;
    report.grad_scale_expected = 1.0 / (static_cast<double>(k) * static_cast<double>(k));

    Rng rng(seed);
    const std::int64_t runs = trials > 0 ? trials : 1;
    double off_sum = 0.0;
    double diag_sum = 0.0;
    std::int64_t off_count = 0;
    std::int64_t diag_count = 0;
    std::vector<double> logits(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t t = 0; t < runs; ++t) {
        if (trials > 0) {
            for (auto& v : logits) v = rng.normal(0.0, logit_scale);
        }
        const auto jac = softmax_jacobian(logits);
        for (std::int64_t i = 0; i < k; ++i) {
            for (std::int64_t j = 0; j < k; ++j) {
                const double value = jac[static_cast<std::size_t>(i * k + j)];
                if (i == j) {
                    diag_sum += value;
                    ++diag_count;
                } else {
                    off_sum += std::abs(value);
                    ++off_count;
                }
            }
        }
    }
    report.grad_scale_measured = off_sum / static_cast<double>(off_count);
    report.selected_grad_measured = diag_sum / static_cast<double>(diag_count);
    return report;
}

GradScaleSweep grad_scale_sweep(std::span<const std::int64_t> ks, std::int64_t trials,
                                std::uint64_t seed) {
    GradScaleSweep sweep;
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t idx = 0; idx < ks.size(); ++idx) {
        auto report = uniform_init_grad_scale(ks[idx], trials, derive_seed(seed, idx));
        const double x = std::log(static_cast<double>(report.k));
        const double y = std::log(report.grad_scale_measured);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        sweep.per_k.push_back(std::move(report));
    }
    const double n = static_cast<double>(ks.size());
    sweep.loglog_slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return sweep;
}

DynamicsReport iterate_softmax(std::span<const double> initial_logits, std::int64_t steps,
                               double gain) {
    if (steps < 1) throw std::invalid_argument("iterate_softmax: steps >= 1 required");
    if (gain <= 1.0) {
        throw std::invalid_argument(
            "iterate_softmax: gain must exceed 1 (plain softmax iteration collapses to uniform)");
    }
    const std::int64_t k = static_cast<std::int64_t>(initial_logits.size());
    DynamicsReport report;
    report.k = k;
    std::vector<double> h(initial_logits.begin(), initial_logits.end());
    std::vector<double> a;
    for (std::int64_t step = 0; step < steps; ++step) {
        a = softmax_values(h);
        report.entropy_trace.push_back(entropy_nats(a));
        double mx = a[0];
        for (double p : a) mx = std::max(mx, p);
        report.corner_distance_trace.push_back(1.0 - mx);
        for (std::int64_t i = 0; i < k; ++i) {
            h[static_cast<std::size_t>(i)] = gain * static_cast<double>(k) * a[static_cast<std::size_t>(i)];
        }
    }
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < k; ++i) {
        if (a[static_cast<std::size_t>(i)] > a[static_cast<std::size_t>(best)]) best = i;
    }
    report.converged_corner = best;
    return report;
}

}  // namespace alignlab
