#pragma once

#include <cstdint>
#include <vector>

#include "valleyopt/model.hpp"
#include "valleyopt/util.hpp"
#include "valleyopt/valuefn.hpp"

namespace valleyopt {

struct SddpConfig {
    int n_iterations = 25;
    int forward_batch = 8;
    int cut_capacity = 100;
    std::vector<std::vector<double>> fd_knots; // per-dam neighbor states for FD slopes
    std::uint64_t rng_seed = 0;
    int workers = 1;
    Deadline deadline;
};

struct SddpIterLog {
    int iteration = 0;
    double mean_forward_cost = 0.0;
    int total_cuts = 0;
    double seconds = 0.0;
};

struct SddpRun {
    ValueSet values; // kind sddp-cuts, one pool per t = 0..T-1
    std::vector<SddpIterLog> log;
    double total_seconds = 0.0;
};

struct SddpTrajectory {
    std::vector<std::vector<double>> states; // x_0..x_T
    std::vector<int> atoms;                  // realized atom index per stage
    double cost = 0.0;                       // stage costs + terminal cost
};

// One forward simulation under the current cut pools (continuation at stage
// T-1 is the exact terminal cost; an empty pool evaluates to its floor).
SddpTrajectory sddp_forward(const Valley& v, const std::vector<CutPool>& pools,
                            const std::vector<int>& scenario);

// Backward pass over all visited states: re-solve the one-step expectation at
// the state and at its fd_knots neighbors, form per-dimension slopes (centered
// inside, one-sided at the box boundary) and append value-anchored cuts.
void sddp_backward(const Valley& v, std::vector<CutPool>& pools,
                   const std::vector<std::vector<double>>& fd_knots,
                   const std::vector<SddpTrajectory>& trajs);

SddpRun solve_sddp(const Valley& v, const SddpConfig& cfg);

} // namespace valleyopt
