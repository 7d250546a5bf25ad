#include "alignlab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace alignlab {

void AdamW::step(ParamMap& params, double lr) {
    ++t_;
    const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (auto& [name, tensor] : params) {
        auto values = tensor.mutable_data();
        const auto grad = tensor.grad();
        auto& slot = slots_[name];
        if (slot.m.empty()) {
            slot.m.assign(values.size(), 0.0);
            slot.v.assign(values.size(), 0.0);
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = i < grad.size() ? grad[i] : 0.0;
            slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * g;
            slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * g * g;
            const double m_hat = slot.m[i] / bias1;
            const double v_hat = slot.v[i] / bias2;
            values[i] -= lr * config_.weight_decay * values[i];
            values[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

double lr_schedule(std::int64_t step, double peak_lr, std::int64_t warmup_steps,
                   std::int64_t total_steps) {
    if (step < 0 || step > total_steps) {
        throw std::invalid_argument("lr_schedule: step out of [0, total_steps]");
    }
    if (warmup_steps > total_steps) {
        throw std::invalid_argument("lr_schedule: warmup must not exceed total");
    }
    if (step < warmup_steps) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (total_steps == warmup_steps) return peak_lr;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace alignlab
