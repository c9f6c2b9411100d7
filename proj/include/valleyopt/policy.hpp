#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "valleyopt/model.hpp"
#include "valleyopt/util.hpp"
#include "valleyopt/valuefn.hpp"

namespace valleyopt {

// Global approximate cost-to-go assembled from any solver's output:
// dp-grid and sddp-cuts evaluate their stage function on the full state;
// dadp-sum evaluates the sum of per-dam functions. t = horizon evaluates the
// exact terminal cost.
struct GlobalValue {
    const Valley* valley = nullptr;
    const ValueSet* values = nullptr;

    double eval(int t, const double* x) const;
};

GlobalValue make_global_value(const Valley& v, const ValueSet& vs);

struct PolicyConfig {
    // Exact enumeration cap on control combinations per step; above it a
    // coordinate-descent pass over dams is used and flagged in the report.
    double enumeration_budget = 1e6;
    int coord_sweeps = 5;
    int workers = 1;
    Deadline deadline;
};

struct PolicyDecision {
    std::vector<double> controls; // dam index order
    std::vector<StageTransition> transitions;
    double value = 0.0; // stage costs + continuation
    bool used_fallback = false;
};

// One-step lookahead: cascade-feasible controls minimizing stage costs plus
// the global value at the next state; lexicographic tie-break.
PolicyDecision one_step_policy(const Valley& v, const GlobalValue& gv, int t,
                               const std::vector<double>& x, const NoiseAtom& w,
                               const PolicyConfig& cfg = {});

struct SimReport {
    int n_scenarios = 0;
    std::vector<double> payoffs; // per scenario
    double mean_payoff = 0.0;
    double std_error = 0.0;
    // traj_quantiles[dam][t] = {min, q25, median, q75, max} over scenarios
    std::vector<std::vector<std::array<double, 5>>> traj_quantiles;
    long violation_count = 0; // independent replay check; 0 by construction
    bool used_fallback = false;
    double seconds = 0.0;
};

SimReport simulate(const Valley& v, const GlobalValue& gv, int n_scenarios,
                   std::uint64_t seed, const PolicyConfig& cfg = {});

// One method's aggregate row, as exchanged through report CSV files.
struct MethodReport {
    std::string method;
    int n_scenarios = 0;
    double mean_payoff = 0.0;  // achieved payoff (simulation estimate)
    double std_error = 0.0;
    std::optional<double> payoff_bound; // upper bound on payoff, when the
                                        // method provides one
    double seconds = 0.0;
    bool used_fallback = false;
};

void write_report_csv(const MethodReport& r, const std::string& path);
MethodReport read_report_csv(const std::string& path);

// Comparison table across methods; gaps in percent against the first row's
// achieved payoff. format is "csv" or "md"; missing bounds render as N.A.
std::string compare_table(const std::vector<MethodReport>& reports,
                          const std::string& format);

void write_histogram_csv(const std::vector<double>& payoffs, int bins,
                         const std::string& path);
void write_trajectory_csv(const SimReport& rep, const std::string& path);

} // namespace valleyopt
