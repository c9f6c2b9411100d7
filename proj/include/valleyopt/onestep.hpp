#pragma once

#include <vector>

#include "valleyopt/model.hpp"

namespace valleyopt {

// Total final cost of a full state vector (dam index order).
inline double terminal_cost(const Valley& v, const double* x) {
    double c = 0.0;
    for (std::size_t i = 0; i < v.dams.size(); ++i) c += final_cost(v.dams[i], x[i]);
    return c;
}

struct OneStepWorkspace {
    std::vector<double> xn;
    std::vector<StageTransition> tr;
    std::vector<double> u;
    std::vector<double> best_u;
    std::vector<StageTransition> best_tr;
    double best = 0.0;
};

// Hazard-decision one-step problem for one noise realization: minimize
// sum of stage costs plus cont(next state) over all feasible control
// combinations, cascading outflows upstream-to-downstream so every coupling
// holds exactly. Enumeration is lexicographic (topological dam order, levels
// ascending) and keeps the first minimizer, which fixes all ties.
// Returns the minimal value; argmin left in ws.best_u / ws.best_tr
// (dam index order).
template <typename Cont>
double one_step_min(const Valley& v, const NoiseAtom& w, Cont&& cont,
                    OneStepWorkspace& ws, const double* x) {
    int n = v.topology.n_dams;
    ws.xn.resize(n);
    ws.tr.resize(n);
    ws.u.resize(n);
    ws.best_u.assign(n, 0.0);
    ws.best_tr.assign(n, StageTransition{});
    bool found = false;
    double best = 0.0;

    auto rec = [&](auto&& self, int k, double acc) -> void {
        if (k == n) {
            double cand = acc + cont(ws.xn.data());
            if (!found || cand < best) {
                found = true;
                best = cand;
                ws.best_u = ws.u;
                ws.best_tr = ws.tr;
            }
            return;
        }
        int i = v.topology.topo_order[k];
        const Dam& d = v.dams[i];
        double z = 0.0;
        for (int c : v.topology.children[i]) z += ws.tr[c].outflow;
        int m = feasible_control_count(d, x[i], w.inflows[i], z);
        for (int li = 0; li < m; ++li) {
            double u = d.control_levels[li];
            ws.tr[i] = dam_step_unchecked(d, x[i], u, w.inflows[i], z);
            ws.tr[i].stage_cost = stage_cost(d, u, w.prices[i]);
            ws.u[i] = u;
            ws.xn[i] = ws.tr[i].x_next;
            self(self, k + 1, acc + ws.tr[i].stage_cost);
        }
    };
    rec(rec, 0, 0.0);
    ws.best = best;
    return best;
}

// Upper bound on the number of control combinations one_step_min may visit.
inline double control_combination_bound(const Valley& v) {
    double prod = 1.0;
    for (const Dam& d : v.dams) prod *= static_cast<double>(d.control_levels.size());
    return prod;
}

} // namespace valleyopt
