#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "valleyopt/model.hpp"
#include "valleyopt/util.hpp"

namespace valleyopt {

// Deterministic synthetic valleys. Profiles:
//   academic  - uniform capacities, more inflow upstream, more turbine
//               capacity downstream, seasonal deterministic prices;
//   realistic - like academic but with 10:1 heterogeneous capacities;
//   desk      - small integer-valued instances whose reachable volumes sit
//               exactly on unit-spaced knots (for oracle and bound tests).
struct GenerateConfig {
    std::string shape = "chain"; // chain | tree
    int n_dams = 3;
    std::uint64_t seed = 0;
    std::string profile = "academic";
    int horizon = 0; // 0 = profile default (12, 12, 4)
};

Valley generate_valley(const GenerateConfig& cfg);

// Integer z-level ranges {0, 1, ..., cap} per link, where cap bounds every
// realizable upstream outflow sum (turbined + spilled, recursively). Intended
// for integer-valued instances; guarantees the decoupled inflow variable can
// reproduce any admissible flow, which the dual-bound tests rely on.
std::vector<std::vector<double>> integer_z_levels(const Valley& v);

struct BenchConfig {
    std::string shape = "chain";
    std::vector<int> dam_counts;
    std::vector<std::string> solvers; // dp | dadp | sddpd
    std::uint64_t seed = 0;
    std::string profile = "academic";
    int horizon = 0;
    double timeout_seconds = 0.0; // per instance; 0 = none
    int dp_knots = 21;
    double dp_budget = 1e9;
    int dadp_knots = 21;
    int dadp_iterations = 30;
    int dadp_samples = 200;
    double dadp_rho = 0.5;
    int sddp_iterations = 25;
    int sddp_batch = 8;
    int sddp_cuts = 100;
    int sddp_knots = 21;
    int repeats = 1;
    int workers = 1;
};

struct BenchRow {
    std::string solver;
    std::string shape;
    int dams = 0;
    std::string status = "ok"; // ok | timeout | budget
    double seconds = 0.0;      // min over repeats
    double payoff_value = 0.0; // solver's payoff estimate/bound; 0 unless ok
};

// Optimization stages only (no simulation): wall time per (solver, size).
std::vector<BenchRow> bench_scaling(const BenchConfig& cfg);

std::string bench_csv(const std::vector<BenchRow>& rows, const TimingPolicy& tp);

} // namespace valleyopt
