#include "valleyopt/dp.hpp"

#include <cmath>
#include <string>

#include "valleyopt/onestep.hpp"
#include "valleyopt/parallel.hpp"

namespace valleyopt {

std::vector<std::vector<double>> default_knots(const Valley& v, int count) {
    std::vector<std::vector<double>> knots;
    knots.reserve(v.dams.size());
    for (const Dam& d : v.dams) knots.push_back(make_knots(d.x_min, d.x_max, count));
    return knots;
}

namespace {

void check_budget(const Valley& v, const DpConfig& cfg, std::size_t n_nodes) {
    double combos = control_combination_bound(v);
    double atoms = 0.0;
    for (const auto& st : v.noise.stages) atoms += static_cast<double>(st.size());
    double work = static_cast<double>(n_nodes) * combos * atoms;
    if (work > cfg.work_budget) {
        throw BudgetError("dp work " + fmt_double(work) + " exceeds budget " +
                          fmt_double(cfg.work_budget) + " (" + std::to_string(n_nodes) +
                          " grid nodes x " + fmt_double(combos) +
                          " control combinations x " + fmt_double(atoms) +
                          " atoms over the horizon)");
    }
}

} // namespace

DpRun solve_dp(const Valley& v, const DpConfig& cfg) {
    check_valley(v);
    int n = v.topology.n_dams;
    int T = v.noise.horizon;
    if (static_cast<int>(cfg.knots.size()) != n)
        throw ValidationError("dp needs one knot vector per dam");
    for (int i = 0; i < n; ++i) {
        const auto& k = cfg.knots[i];
        if (k.size() < 2 || k.front() != v.dams[i].x_min || k.back() != v.dams[i].x_max)
            throw ValidationError("dp knot vector for dam " + std::to_string(v.dams[i].id) +
                                  " must span [x_min, x_max]");
    }

    Grid proto;
    proto.knots = cfg.knots;
    std::size_t n_nodes = proto.n_nodes();
    check_budget(v, cfg, n_nodes);

    DpRun run;
    run.values.kind = "dp-grid";
    run.values.horizon = T;
    run.values.n_dams = n;
    run.values.stages.assign(T, ValueFunction{});
    run.stage_seconds.assign(T, 0.0);

    WallTimer total;
    const Grid* next_grid = nullptr; // null at t = T-1: exact terminal cost
    for (int t = T - 1; t >= 0; --t) {
        WallTimer stage_timer;
        Grid g = proto;
        g.values.assign(n_nodes, 0.0);
        const auto& atoms = v.noise.stages[t];
        parallel_for(n_nodes, cfg.workers, [&](std::size_t node) {
            if (cfg.deadline.expired())
                throw BudgetError("dp deadline exceeded at stage " + std::to_string(t));
            OneStepWorkspace ws;
            std::vector<double> x;
            g.node_coords(node, x);
            double acc = 0.0;
            for (const NoiseAtom& w : atoms) {
                double m;
                if (next_grid == nullptr) {
                    m = one_step_min(
                        v, w, [&](const double* xn) { return terminal_cost(v, xn); }, ws,
                        x.data());
                } else {
                    m = one_step_min(
                        v, w, [&](const double* xn) { return next_grid->eval(xn); }, ws,
                        x.data());
                }
                acc += w.p * m;
            }
            g.values[node] = acc;
        });
        ValueFunction vf;
        vf.t = t;
        vf.dim = n;
        vf.repr = std::move(g);
        run.values.stages[t] = std::move(vf);
        next_grid = &std::get<Grid>(run.values.stages[t].repr);
        run.stage_seconds[t] = stage_timer.seconds();
    }
    run.total_seconds = total.seconds();

    std::vector<double> x0(n);
    for (int i = 0; i < n; ++i) x0[i] = v.dams[i].x0;
    run.value_at_x0 = run.values.stages[0].eval(x0);
    return run;
}

OneStepDecision dp_feedback(const Valley& v, const ValueSet& vs, int t,
                            const std::vector<double>& x, const NoiseAtom& w) {
    int T = v.noise.horizon;
    if (t < 0 || t >= T) throw ValidationError("dp_feedback stage out of range");
    OneStepWorkspace ws;
    OneStepDecision dec;
    if (t + 1 == T) {
        dec.value = one_step_min(
            v, w, [&](const double* xn) { return terminal_cost(v, xn); }, ws, x.data());
    } else {
        const ValueFunction& vf = vs.stages[t + 1];
        dec.value =
            one_step_min(v, w, [&](const double* xn) { return vf.eval(xn); }, ws, x.data());
    }
    dec.controls = ws.best_u;
    dec.transitions = ws.best_tr;
    return dec;
}

} // namespace valleyopt
