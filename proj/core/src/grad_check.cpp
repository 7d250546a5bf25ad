#include "alignlab/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace alignlab {

namespace {

double eval_scalar(const std::function<Tensor(std::span<const Tensor>)>& f,
                   std::span<const Tensor> inputs) {
    NoGradGuard no_grad;
    Tensor out = f(inputs);
    if (out.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
    return out.item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(std::span<const Tensor>)>& f,
                           std::vector<Tensor>& inputs, const GradCheckOptions& options) {
    GradCheckReport report;
    const double h = options.step;

    // One analytic pass.
    for (auto& t : inputs) t.zero_grad();
    Tensor loss = f(inputs);
    if (loss.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
    loss.backward();

    std::vector<std::vector<double>> analytic(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        const auto g = inputs[i].grad();
        analytic[i] = g.empty() ? std::vector<double>(static_cast<std::size_t>(inputs[i].numel()), 0.0)
                                : std::vector<double>(g.begin(), g.end());
    }

    const double f0 = eval_scalar(f, inputs);

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        auto values = inputs[i].mutable_data();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double original = values[j];
            values[j] = original + h;
            const double f_plus = eval_scalar(f, inputs);
            values[j] = original - h;
            const double f_minus = eval_scalar(f, inputs);
            values[j] = original;

            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double d_forward = (f_plus - f0) / h;
            const double d_backward = (f0 - f_minus) / h;
            const double kink_scale = std::max({std::abs(d_forward), std::abs(d_backward), 1.0});
            const bool near_kink =
                std::abs(d_forward - d_backward) > options.kink_tolerance * kink_scale;

            const double a = analytic[i][j];
            const double scale = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / scale;

            GradCheckEntry entry{i, j, a, numeric, rel};
            if (near_kink) {
                report.discontinuity_adjacent.push_back(entry);
                continue;
            }
            ++report.entries_checked;
            report.max_rel_err = std::max(report.max_rel_err, rel);
            if (rel > options.tolerance) {
                report.failures.push_back(entry);
            }
        }
    }
    return report;
}

}  // namespace alignlab
