#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "valleyopt/errors.hpp"

namespace valleyopt {

struct Dam {
    int id = 0;
    double x_min = 0.0;
    double x_max = 0.0;
    double u_min = 0.0;
    double u_max = 0.0;
    double x_target = 0.0;
    double penalty_a = 0.0;
    double epsilon = 0.0;
    std::vector<double> control_levels;
    double x0 = 0.0;
};

// parent[i] = downstream dam index (-1 at a valley outlet);
// children[j] = upstream dams whose outflow enters dam j.
struct ValleyTopology {
    int n_dams = 0;
    std::vector<int> parent;
    std::vector<std::vector<int>> children;
    // Every dam appears after all of its upstream dams; ties resolved by
    // ascending index so enumeration order is reproducible.
    std::vector<int> topo_order;
};

struct NoiseAtom {
    double p = 0.0;
    std::vector<double> inflows;
    std::vector<double> prices;
};

struct NoiseProcess {
    int horizon = 0;
    std::vector<std::vector<NoiseAtom>> stages;  // one atom list per stage
};

struct Valley {
    ValleyTopology topology;
    std::vector<Dam> dams;
    NoiseProcess noise;
};

struct StageTransition {
    double x_next = 0.0;
    double spill = 0.0;
    double outflow = 0.0;    // turbined + spilled
    double stage_cost = 0.0; // filled by cost-aware callers, not by dam_step
};

// Volume after releasing u and receiving inflow a plus upstream water z.
// Fixed parenthesization: feasibility tests elsewhere must match it bit for
// bit so that control_range and dam_step never disagree.
inline double post_flow_volume(double x, double u, double a, double z) {
    return ((x - u) + a) + z;
}

inline bool control_feasible(const Dam& d, double x, double u, double a, double z) {
    return post_flow_volume(x, u, a, z) >= d.x_min;
}

// Transition kernel: spill s = max{0, x-u+a+z-x_max}, next volume x-u+a+z-s,
// outflow u+s. Precondition (unchecked): u taken from control_range.
inline StageTransition dam_step_unchecked(const Dam& d, double x, double u, double a,
                                          double z) {
    StageTransition tr;
    double w = post_flow_volume(x, u, a, z);
    if (w > d.x_max) {
        tr.spill = w - d.x_max;
        tr.x_next = d.x_max; // spill occurs only at capacity, exactly
    } else {
        tr.spill = 0.0;
        tr.x_next = w;
    }
    tr.outflow = u + tr.spill;
    return tr;
}

StageTransition dam_step(const Dam& d, double x, double u, double a, double z);

// Feasible controls form a prefix of control_levels (the release bound is
// decreasing in u); returns the prefix length. Throws ValidationError when
// even control_levels[0] is infeasible (inconsistent instance data).
int feasible_control_count(const Dam& d, double x, double a, double z);

std::vector<double> control_range(const Dam& d, double x, double a, double z);

inline double stage_cost(const Dam& d, double u, double p) {
    return d.epsilon * u * u - p * u;
}

inline double final_cost(const Dam& d, double x_T) {
    double m = x_T - d.x_target;
    if (m >= 0.0) return 0.0;
    return d.penalty_a * m * m;
}

// Builds children/topo_order from parent pointers; throws ValidationError on
// cycles or out-of-range references.
ValleyTopology make_topology(std::vector<int> parent);

// Every broken invariant as one human-readable line; empty means valid.
std::vector<std::string> validate_valley(const Valley& v);
void check_valley(const Valley& v); // throws ValidationError listing all violations

struct LoadOptions {
    // Stage entries of the form {"marginals": [...]} (independent per-dam
    // atoms) are expanded to joint atoms only when this is set.
    bool expand_marginals = false;
    int marginal_product_cap = 256; // atoms per stage after expansion
};

Valley load_valley(const std::string& path, const LoadOptions& opts = {});
Valley parse_valley(const std::string& json_text, const LoadOptions& opts = {});
void save_valley(const Valley& v, const std::string& path);
std::string valley_to_json(const Valley& v);

// Atom index for a uniform draw r in [0,1): cumulative-probability walk.
int pick_atom(const std::vector<NoiseAtom>& atoms, double r);

// One atom index per stage, deterministic in the seed.
std::vector<int> sample_scenario_indices(const NoiseProcess& noise, std::uint64_t seed);

std::vector<std::pair<std::vector<double>, std::vector<double>>>
sample_scenario(const NoiseProcess& noise, std::uint64_t seed);

} // namespace valleyopt
