#pragma once

#include <vector>

#include "valleyopt/model.hpp"
#include "valleyopt/util.hpp"
#include "valleyopt/valuefn.hpp"

namespace valleyopt {

struct DpConfig {
    std::vector<std::vector<double>> knots; // per dam, spanning [x_min, x_max]
    // Cap on grid nodes x control combinations x atoms summed over stages.
    double work_budget = 1e9;
    int workers = 1;
    Deadline deadline;
};

struct DpRun {
    ValueSet values; // kind dp-grid, one product-grid function per t = 0..T-1
    std::vector<double> stage_seconds; // backward sweep time per stage
    double total_seconds = 0.0;
    double value_at_x0 = 0.0; // cost convention
};

// Exact backward recursion on the product grid: V_T is the exact terminal
// cost; V_t(x) = E[min over controls of stage costs + V_{t+1}(new state)].
DpRun solve_dp(const Valley& v, const DpConfig& cfg);

struct OneStepDecision {
    double value = 0.0;
    std::vector<double> controls;            // dam index order
    std::vector<StageTransition> transitions;
};

// Argmin control combination at (t, x, w) under the solved value functions.
OneStepDecision dp_feedback(const Valley& v, const ValueSet& vs, int t,
                            const std::vector<double>& x, const NoiseAtom& w);

// Per-dam knot vectors spanning each dam's volume interval.
std::vector<std::vector<double>> default_knots(const Valley& v, int count);

} // namespace valleyopt
