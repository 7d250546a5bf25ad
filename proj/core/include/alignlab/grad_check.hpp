#pragma once

#include <functional>
#include <span>
#include <vector>

#include "alignlab/tensor.hpp"

namespace alignlab {

struct GradCheckEntry {
    std::size_t input;       // which input tensor
    std::size_t index;       // flat element index within it
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;   // over clean entries only
    std::size_t entries_checked = 0;
    std::vector<GradCheckEntry> failures;
    std::vector<GradCheckEntry> discontinuity_adjacent;

    bool ok() const { return failures.empty(); }
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-5;
    // An entry is discontinuity-adjacent when forward and backward one-sided
    // difference quotients disagree by more than this fraction of their scale.
    double kink_tolerance = 1e-3;
};

/// Compares the reverse-mode gradient of a scalar-valued function against
/// central finite differences, element by element over every input that
/// requires grad. f must be pure: it is re-invoked with perturbed leaves.
/// Entries within `step` of a threshold/argmax discontinuity are reported
/// separately, not failed.
GradCheckReport grad_check(const std::function<Tensor(std::span<const Tensor>)>& f,
                           std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace alignlab
