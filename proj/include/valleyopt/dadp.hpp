#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "valleyopt/model.hpp"
#include "valleyopt/util.hpp"
#include "valleyopt/valuefn.hpp"

namespace valleyopt {

// One multiplier per coupling equation: the total upstream inflow of every
// dam that has children is a decoupled decision variable z, priced by an
// expected multiplier per stage. Links are indexed by receiver dam, ascending.
struct DualState {
    std::vector<int> link_dams;                // receiver dam index per link
    std::vector<std::vector<double>> lambda;   // [link][t]
    std::vector<std::vector<double>> gradient; // [link][t], E[z - sent water]
    int iterations = 0;
    double dual_value = 0.0; // cost convention: sum of subproblem optima
    bool converged = false;
};

DualState make_dual_state(const Valley& v); // zero multipliers

// Receiver dams (those with at least one upstream child), ascending.
std::vector<int> link_receivers(const ValleyTopology& topo);

// Decoupled inflow decision set per link: union of the children's control
// levels and their pairwise sums, plus 0, re-quantized to at most 21 values.
std::vector<std::vector<double>> default_z_levels(const Valley& v);

struct SubproblemSolution {
    int dam = 0;
    std::vector<ValueFunction> vfs; // 1-D grids for t = 0..T-1; terminal exact
    // feedback[t][knot * n_atoms + atom] = argmin (u, z) at that grid node
    std::vector<std::vector<std::pair<double, double>>> feedback;
    double value = 0.0; // V_0 at the dam's x0
};

struct DadpConfig {
    std::vector<std::vector<double>> z_levels; // per link; empty = defaults
    std::vector<std::vector<double>> knots;    // per dam; empty = uniform knots
    int knots_per_dam = 51;
    int gradient_samples = 1000;
    bool exact_expectation = false; // propagate exact state distributions
    std::size_t exact_support_cap = 200000;
    int max_iterations = 300;
    double tolerance = -1.0; // <0: 1e-3 x mean dam capacity
    enum class Optimizer { FixedStep, QuasiNewton };
    Optimizer optimizer = Optimizer::QuasiNewton;
    double fixed_step_rho = 1.0;
    double initial_step = 1.0; // first trial multiplier change, sup norm
    int lbfgs_memory = 10;
    std::uint64_t rng_seed = 0;
    int workers = 1;
    Deadline deadline;
};

// Backward 1-D recursion for one dam under the current expected multipliers:
// stage objective = turbine cost + lambda_in * z - lambda_out * outflow,
// minimized over the dam's control levels and (when it has children) z levels.
SubproblemSolution solve_subproblem(const Valley& v, int dam, const DualState& dual,
                                    const std::vector<std::vector<double>>& z_levels,
                                    const std::vector<double>& knots);

// Argmin (u, z) of one dam's stage problem at an arbitrary volume x.
struct SubDecision {
    double u = 0.0;
    double z = 0.0;
    StageTransition tr;
    double objective = 0.0;
};
SubDecision subproblem_decide(const Valley& v, int dam, const DualState& dual,
                              const std::vector<std::vector<double>>& z_levels,
                              const SubproblemSolution& sol, int t, double x,
                              const NoiseAtom& w);

struct DualGradient {
    std::vector<std::vector<double>> g; // [link][t]
    double dual_value = 0.0;            // cost convention
    double grad_inf = 0.0;
};

// Expected coupling deviation per link and stage: each dam follows its own
// feedback along shared noise (common random numbers), or exact
// state-distribution propagation when exact_expectation is set.
DualGradient dual_gradient(const Valley& v, const std::vector<SubproblemSolution>& subs,
                           const DualState& dual,
                           const std::vector<std::vector<double>>& z_levels,
                           const DadpConfig& cfg);

struct DadpIterLog {
    int k = 0;
    double dual_value = 0.0; // cost convention
    double grad_inf = 0.0;
    double seconds = 0.0;
};

struct DadpRun {
    DualState dual;
    std::vector<SubproblemSolution> subs; // at the returned multipliers
    ValueSet values;                      // kind dadp-sum
    std::vector<DadpIterLog> log;
    // lambda_history[k][link][t]: multipliers entering iteration k
    std::vector<std::vector<std::vector<double>>> lambda_history;
    bool converged = false;
    double dual_value = 0.0; // cost convention
    double total_seconds = 0.0;
};

DadpRun solve_dadp(const Valley& v, const DadpConfig& cfg);

} // namespace valleyopt
