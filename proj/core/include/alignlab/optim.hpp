#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "alignlab/encoder.hpp"

namespace alignlab {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Decoupled weight decay AdamW; decay applies directly to parameters,
/// separately from the bias-corrected adaptive step.
class AdamW {
  public:
    explicit AdamW(AdamWConfig config) : config_(config) {}

    void step(ParamMap& params, double lr);
    std::int64_t steps_taken() const { return t_; }

  private:
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };
    AdamWConfig config_;
    std::map<std::string, Slot> slots_;
    std::int64_t t_ = 0;
};

/// Linear 0 -> peak over the warmup, then cosine decay to 0 at total_steps.
double lr_schedule(std::int64_t step, double peak_lr, std::int64_t warmup_steps,
                   std::int64_t total_steps);

}  // namespace alignlab
