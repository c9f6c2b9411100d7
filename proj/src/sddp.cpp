#include "valleyopt/sddp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "valleyopt/onestep.hpp"
#include "valleyopt/parallel.hpp"
#include "valleyopt/rng.hpp"

namespace valleyopt {

namespace {

// Expected one-step value at x under stage-t atoms, continuation = pool t+1
// or the exact terminal cost.
double expected_one_step(const Valley& v, const std::vector<CutPool>& pools, int t,
                         const double* x, OneStepWorkspace& ws) {
    int T = v.noise.horizon;
    double acc = 0.0;
    for (const NoiseAtom& w : v.noise.stages[t]) {
        double m;
        if (t + 1 == T) {
            m = one_step_min(
                v, w, [&](const double* xn) { return terminal_cost(v, xn); }, ws, x);
        } else {
            const CutPool& pool = pools[t + 1];
            m = one_step_min(
                v, w, [&](const double* xn) { return pool.eval(xn); }, ws, x);
        }
        acc += w.p * m;
    }
    return acc;
}

int nearest_knot(const std::vector<double>& k, double x) {
    auto it = std::lower_bound(k.begin(), k.end(), x);
    if (it == k.end()) return static_cast<int>(k.size()) - 1;
    if (it == k.begin()) return 0;
    int hi = static_cast<int>(it - k.begin());
    // Ties go to the lower knot for reproducibility.
    return (x - k[hi - 1] <= k[hi] - x) ? hi - 1 : hi;
}

} // namespace

SddpTrajectory sddp_forward(const Valley& v, const std::vector<CutPool>& pools,
                            const std::vector<int>& scenario) {
    int n = v.topology.n_dams;
    int T = v.noise.horizon;
    SddpTrajectory traj;
    traj.atoms = scenario;
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[i] = v.dams[i].x0;
    traj.states.push_back(x);
    OneStepWorkspace ws;
    double cost = 0.0;
    for (int t = 0; t < T; ++t) {
        const NoiseAtom& w = v.noise.stages[t][scenario[t]];
        if (t + 1 == T) {
            one_step_min(v, w, [&](const double* xn) { return terminal_cost(v, xn); }, ws,
                         x.data());
        } else {
            const CutPool& pool = pools[t + 1];
            one_step_min(v, w, [&](const double* xn) { return pool.eval(xn); }, ws,
                         x.data());
        }
        for (int i = 0; i < n; ++i) {
            cost += ws.best_tr[i].stage_cost;
            x[i] = ws.best_tr[i].x_next;
        }
        traj.states.push_back(x);
    }
    cost += terminal_cost(v, x.data());
    traj.cost = cost;
    return traj;
}

void sddp_backward(const Valley& v, std::vector<CutPool>& pools,
                   const std::vector<std::vector<double>>& fd_knots,
                   const std::vector<SddpTrajectory>& trajs) {
    int n = v.topology.n_dams;
    int T = v.noise.horizon;
    OneStepWorkspace ws;
    std::vector<double> probe(n);
    for (int t = T - 1; t >= 0; --t) {
        for (const SddpTrajectory& traj : trajs) {
            const std::vector<double>& x = traj.states[t];
            double v0 = expected_one_step(v, pools, t, x.data(), ws);
            std::vector<double> grad(n, 0.0);
            for (int i = 0; i < n; ++i) {
                const auto& k = fd_knots[i];
                int j = nearest_knot(k, x[i]);
                probe = x;
                double v_hi, v_lo, hi, lo;
                if (j == 0) {
                    probe[i] = k[1];
                    v_hi = expected_one_step(v, pools, t, probe.data(), ws);
                    v_lo = v0;
                    hi = k[1];
                    lo = x[i];
                } else if (j == static_cast<int>(k.size()) - 1) {
                    probe[i] = k[j - 1];
                    v_lo = expected_one_step(v, pools, t, probe.data(), ws);
                    v_hi = v0;
                    hi = x[i];
                    lo = k[j - 1];
                } else {
                    probe[i] = k[j + 1];
                    v_hi = expected_one_step(v, pools, t, probe.data(), ws);
                    probe[i] = k[j - 1];
                    v_lo = expected_one_step(v, pools, t, probe.data(), ws);
                    hi = k[j + 1];
                    lo = k[j - 1];
                }
                grad[i] = (v_hi - v_lo) / (hi - lo);
            }
            double intercept = v0;
            for (int i = 0; i < n; ++i) intercept -= grad[i] * x[i];
            pools[t].add_cut(intercept, std::move(grad));
        }
    }
}

SddpRun solve_sddp(const Valley& v, const SddpConfig& cfg) {
    check_valley(v);
    int n = v.topology.n_dams;
    int T = v.noise.horizon;
    if (cfg.n_iterations < 0 || cfg.forward_batch < 1 || cfg.cut_capacity < 1)
        throw ValidationError("sddp config values must be positive");
    if (static_cast<int>(cfg.fd_knots.size()) != n)
        throw ValidationError("sddp needs one fd knot vector per dam");
    for (int i = 0; i < n; ++i)
        if (cfg.fd_knots[i].size() < 2)
            throw ValidationError("sddp fd knot vectors need at least 2 knots");

    std::vector<CutPool> pools(T);
    for (CutPool& p : pools) {
        p.capacity = cfg.cut_capacity;
        p.empty_floor = 0.0;
    }

    SddpRun run;
    WallTimer total;
    for (int it = 0; it < cfg.n_iterations; ++it) {
        if (cfg.deadline.expired())
            throw BudgetError("sddp deadline exceeded at iteration " + std::to_string(it));
        WallTimer iter_timer;
        std::vector<SddpTrajectory> trajs(cfg.forward_batch);
        parallel_for(static_cast<std::size_t>(cfg.forward_batch), cfg.workers,
                     [&](std::size_t b) {
                         auto scenario = sample_scenario_indices(
                             v.noise, mix_seed(cfg.rng_seed, static_cast<std::uint64_t>(it),
                                               static_cast<std::uint64_t>(b)));
                         trajs[b] = sddp_forward(v, pools, scenario);
                     });
        sddp_backward(v, pools, cfg.fd_knots, trajs);
        double mean_cost = 0.0;
        for (const auto& tr : trajs) mean_cost += tr.cost;
        mean_cost /= cfg.forward_batch;
        int total_cuts = 0;
        for (const CutPool& p : pools) total_cuts += static_cast<int>(p.cuts.size());
        run.log.push_back(SddpIterLog{it, mean_cost, total_cuts, iter_timer.seconds()});
    }
    run.total_seconds = total.seconds();

    run.values.kind = "sddp-cuts";
    run.values.horizon = T;
    run.values.n_dams = n;
    run.values.stages.reserve(T);
    for (int t = 0; t < T; ++t) {
        ValueFunction vf;
        vf.t = t;
        vf.dim = n;
        vf.repr = std::move(pools[t]);
        run.values.stages.push_back(std::move(vf));
    }
    return run;
}

} // namespace valleyopt
