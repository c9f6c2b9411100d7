#include "valleyopt/dadp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <map>
#include <string>

#include "valleyopt/parallel.hpp"
#include "valleyopt/rng.hpp"

namespace valleyopt {

std::vector<int> link_receivers(const ValleyTopology& topo) {
    std::vector<int> links;
    for (int i = 0; i < topo.n_dams; ++i)
        if (!topo.children[i].empty()) links.push_back(i);
    return links;
}

DualState make_dual_state(const Valley& v) {
    DualState ds;
    ds.link_dams = link_receivers(v.topology);
    ds.lambda.assign(ds.link_dams.size(),
                     std::vector<double>(v.noise.horizon, 0.0));
    ds.gradient = ds.lambda;
    return ds;
}

std::vector<std::vector<double>> default_z_levels(const Valley& v) {
    std::vector<std::vector<double>> out;
    for (int j : link_receivers(v.topology)) {
        const auto& kids = v.topology.children[j];
        double cap = 0.0;
        std::vector<double> s{0.0};
        for (int c : kids) {
            cap += v.dams[c].u_max + v.dams[c].x_max;
            for (double lv : v.dams[c].control_levels) s.push_back(lv);
        }
        for (std::size_t a = 0; a < kids.size(); ++a)
            for (std::size_t b = a + 1; b < kids.size(); ++b)
                for (double la : v.dams[kids[a]].control_levels)
                    for (double lb : v.dams[kids[b]].control_levels)
                        s.push_back(la + lb);
        std::vector<double> f;
        for (double z : s)
            if (z >= 0.0 && z <= cap) f.push_back(z);
        std::sort(f.begin(), f.end());
        f.erase(std::unique(f.begin(), f.end()), f.end());
        if (f.size() > 21 && f.back() > f.front()) f = make_knots(f.front(), f.back(), 21);
        out.push_back(std::move(f));
    }
    return out;
}

namespace {

// Multiplier context of one dam: price paid for its decoupled inflow z and
// reward earned on its outflow (0 where the dam has no children / no parent).
struct SubCtx {
    const Dam* d = nullptr;
    int dam_idx = 0;
    const std::vector<double>* zl = nullptr; // null: z fixed to 0
    const double* lam_in = nullptr;          // per stage, or null
    const double* lam_out = nullptr;         // per stage, or null
};

const std::vector<double> kZeroLevel{0.0};

// Minimize turbine cost + lam_in*z - lam_out*outflow + cont(next volume) over
// z levels (ascending) and feasible controls (ascending); first minimum wins.
template <typename Cont>
SubDecision sub_one_step(const SubCtx& c, int t, double x, const NoiseAtom& w,
                         Cont&& cont) {
    const Dam& d = *c.d;
    double a = w.inflows[c.dam_idx];
    double price = w.prices[c.dam_idx];
    double li = c.lam_in ? c.lam_in[t] : 0.0;
    double lo = c.lam_out ? c.lam_out[t] : 0.0;
    const std::vector<double>& zs = c.zl ? *c.zl : kZeroLevel;
    SubDecision best;
    bool found = false;
    for (double z : zs) {
        int m = feasible_control_count(d, x, a, z);
        for (int ui = 0; ui < m; ++ui) {
            double u = d.control_levels[ui];
            StageTransition tr = dam_step_unchecked(d, x, u, a, z);
            tr.stage_cost = stage_cost(d, u, price);
            double obj = tr.stage_cost + li * z - lo * tr.outflow + cont(tr.x_next);
            if (!found || obj < best.objective) {
                found = true;
                best.u = u;
                best.z = z;
                best.tr = tr;
                best.objective = obj;
            }
        }
    }
    return best;
}

struct LinkIndex {
    std::vector<int> of_dam; // dam -> link index, -1 when dam has no children
};

LinkIndex make_link_index(const Valley& v, const DualState& dual) {
    LinkIndex li;
    li.of_dam.assign(v.topology.n_dams, -1);
    for (std::size_t k = 0; k < dual.link_dams.size(); ++k)
        li.of_dam[dual.link_dams[k]] = static_cast<int>(k);
    return li;
}

SubCtx make_ctx(const Valley& v, int dam, const DualState& dual, const LinkIndex& li,
                const std::vector<std::vector<double>>& z_levels) {
    SubCtx c;
    c.d = &v.dams[dam];
    c.dam_idx = dam;
    int own = li.of_dam[dam];
    if (own >= 0) {
        c.zl = &z_levels[own];
        c.lam_in = dual.lambda[own].data();
    }
    int par = v.topology.parent[dam];
    if (par >= 0) c.lam_out = dual.lambda[li.of_dam[par]].data();
    return c;
}

} // namespace

SubproblemSolution solve_subproblem(const Valley& v, int dam, const DualState& dual,
                                    const std::vector<std::vector<double>>& z_levels,
                                    const std::vector<double>& knots) {
    int T = v.noise.horizon;
    const Dam& d = v.dams[dam];
    LinkIndex li = make_link_index(v, dual);
    SubCtx ctx = make_ctx(v, dam, dual, li, z_levels);

    SubproblemSolution sol;
    sol.dam = dam;
    sol.vfs.assign(T, ValueFunction{});
    sol.feedback.assign(T, {});

    const Grid* next = nullptr;
    for (int t = T - 1; t >= 0; --t) {
        Grid g;
        g.knots = {knots};
        g.values.assign(knots.size(), 0.0);
        const auto& atoms = v.noise.stages[t];
        auto& fb = sol.feedback[t];
        fb.assign(knots.size() * atoms.size(), {0.0, 0.0});
        for (std::size_t k = 0; k < knots.size(); ++k) {
            double x = knots[k];
            double acc = 0.0;
            for (std::size_t ai = 0; ai < atoms.size(); ++ai) {
                SubDecision dec;
                if (next == nullptr) {
                    dec = sub_one_step(ctx, t, x, atoms[ai],
                                       [&](double xn) { return final_cost(d, xn); });
                } else {
                    dec = sub_one_step(ctx, t, x, atoms[ai],
                                       [&](double xn) { return next->eval(&xn); });
                }
                acc += atoms[ai].p * dec.objective;
                fb[k * atoms.size() + ai] = {dec.u, dec.z};
            }
            g.values[k] = acc;
        }
        ValueFunction vf;
        vf.t = t;
        vf.dim = 1;
        vf.repr = std::move(g);
        sol.vfs[t] = std::move(vf);
        next = &std::get<Grid>(sol.vfs[t].repr);
    }
    double x0 = d.x0;
    sol.value = sol.vfs[0].eval(&x0);
    return sol;
}

SubDecision subproblem_decide(const Valley& v, int dam, const DualState& dual,
                              const std::vector<std::vector<double>>& z_levels,
                              const SubproblemSolution& sol, int t, double x,
                              const NoiseAtom& w) {
    const Dam& d = v.dams[dam];
    LinkIndex li = make_link_index(v, dual);
    SubCtx ctx = make_ctx(v, dam, dual, li, z_levels);
    int T = v.noise.horizon;
    if (t + 1 == T)
        return sub_one_step(ctx, t, x, w, [&](double xn) { return final_cost(d, xn); });
    const ValueFunction& vf = sol.vfs[t + 1];
    return sub_one_step(ctx, t, x, w, [&](double xn) { return vf.eval(&xn); });
}

namespace {

// Per-dam expectations of the decoupled inflow choice and the realized
// outflow, per stage. Combined across dams into per-link deviations.
struct DamFlows {
    std::vector<double> z; // E[z choice], zero when the dam has no children
    std::vector<double> g; // E[outflow]
};

DamFlows exact_flows(const Valley& v, int dam, const SubCtx& ctx,
                     const SubproblemSolution& sol, std::size_t support_cap) {
    int T = v.noise.horizon;
    const Dam& d = v.dams[dam];
    DamFlows fl;
    fl.z.assign(T, 0.0);
    fl.g.assign(T, 0.0);
    std::map<double, double> dist{{d.x0, 1.0}};
    for (int t = 0; t < T; ++t) {
        const auto& atoms = v.noise.stages[t];
        std::map<double, double> next_dist;
        for (const auto& [x, q] : dist) {
            for (const NoiseAtom& w : atoms) {
                SubDecision dec;
                if (t + 1 == T) {
                    dec = sub_one_step(ctx, t, x, w,
                                       [&](double xn) { return final_cost(d, xn); });
                } else {
                    const ValueFunction& vf = sol.vfs[t + 1];
                    dec = sub_one_step(ctx, t, x, w,
                                       [&](double xn) { return vf.eval(&xn); });
                }
                double mass = q * w.p;
                fl.z[t] += mass * dec.z;
                fl.g[t] += mass * dec.tr.outflow;
                next_dist[dec.tr.x_next] += mass;
            }
        }
        if (next_dist.size() > support_cap)
            throw BudgetError("exact expectation support exceeds " +
                              std::to_string(support_cap) +
                              " states; use Monte Carlo gradient sampling");
        dist.swap(next_dist);
    }
    return fl;
}

DamFlows sampled_flows(const Valley& v, int dam, const SubCtx& ctx,
                       const SubproblemSolution& sol,
                       const std::vector<std::vector<int>>& scenarios) {
    int T = v.noise.horizon;
    const Dam& d = v.dams[dam];
    DamFlows fl;
    fl.z.assign(T, 0.0);
    fl.g.assign(T, 0.0);
    for (const auto& sc : scenarios) {
        double x = d.x0;
        for (int t = 0; t < T; ++t) {
            const NoiseAtom& w = v.noise.stages[t][sc[t]];
            SubDecision dec;
            if (t + 1 == T) {
                dec = sub_one_step(ctx, t, x, w,
                                   [&](double xn) { return final_cost(d, xn); });
            } else {
                const ValueFunction& vf = sol.vfs[t + 1];
                dec = sub_one_step(ctx, t, x, w,
                                   [&](double xn) { return vf.eval(&xn); });
            }
            fl.z[t] += dec.z;
            fl.g[t] += dec.tr.outflow;
            x = dec.tr.x_next;
        }
    }
    double inv = 1.0 / static_cast<double>(scenarios.size());
    for (int t = 0; t < T; ++t) {
        fl.z[t] *= inv;
        fl.g[t] *= inv;
    }
    return fl;
}

} // namespace

DualGradient dual_gradient(const Valley& v, const std::vector<SubproblemSolution>& subs,
                           const DualState& dual,
                           const std::vector<std::vector<double>>& z_levels,
                           const DadpConfig& cfg) {
    int n = v.topology.n_dams;
    int T = v.noise.horizon;
    LinkIndex li = make_link_index(v, dual);

    std::vector<std::vector<int>> scenarios;
    if (!cfg.exact_expectation) {
        if (cfg.gradient_samples < 1)
            throw ValidationError("gradient sampling needs at least one scenario");
        scenarios.reserve(cfg.gradient_samples);
        for (int s = 0; s < cfg.gradient_samples; ++s)
            scenarios.push_back(sample_scenario_indices(
                v.noise, mix_seed(cfg.rng_seed, static_cast<std::uint64_t>(s), 0x9e3779b9)));
    }

    std::vector<DamFlows> flows(n);
    parallel_for(static_cast<std::size_t>(n), cfg.workers, [&](std::size_t i) {
        SubCtx ctx = make_ctx(v, static_cast<int>(i), dual, li, z_levels);
        flows[i] = cfg.exact_expectation
                       ? exact_flows(v, static_cast<int>(i), ctx, subs[i],
                                     cfg.exact_support_cap)
                       : sampled_flows(v, static_cast<int>(i), ctx, subs[i], scenarios);
    });

    DualGradient out;
    out.g.assign(dual.link_dams.size(), std::vector<double>(T, 0.0));
    for (std::size_t k = 0; k < dual.link_dams.size(); ++k) {
        int j = dual.link_dams[k];
        for (int t = 0; t < T; ++t) {
            double dev = flows[j].z[t];
            for (int c : v.topology.children[j]) dev -= flows[c].g[t];
            out.g[k][t] = dev;
            out.grad_inf = std::max(out.grad_inf, std::abs(dev));
        }
    }
    for (const auto& s : subs) out.dual_value += s.value;
    return out;
}

namespace {

std::vector<double> flatten(const std::vector<std::vector<double>>& m) {
    std::vector<double> f;
    for (const auto& row : m) f.insert(f.end(), row.begin(), row.end());
    return f;
}

void unflatten(const std::vector<double>& f, std::vector<std::vector<double>>& m) {
    std::size_t p = 0;
    for (auto& row : m)
        for (double& v : row) v = f[p++];
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double inf_norm(const std::vector<double>& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

struct LbfgsPair {
    std::vector<double> s, y;
    double rho = 0.0;
};

// Two-loop recursion: returns the quasi-Newton descent direction -H*grad.
std::vector<double> lbfgs_direction(const std::deque<LbfgsPair>& pairs,
                                    const std::vector<double>& grad) {
    std::vector<double> q = grad;
    std::vector<double> alpha(pairs.size());
    for (std::size_t i = pairs.size(); i-- > 0;) {
        alpha[i] = pairs[i].rho * dot(pairs[i].s, q);
        for (std::size_t k = 0; k < q.size(); ++k) q[k] -= alpha[i] * pairs[i].y[k];
    }
    if (!pairs.empty()) {
        const LbfgsPair& last = pairs.back();
        // Clamp the scaling: near kinks of a piecewise-linear dual the
        // subgradient jump makes s'y/y'y collapse, which would shrink every
        // subsequent direction to nothing.
        double gamma = std::clamp(dot(last.s, last.y) / dot(last.y, last.y), 1e-2, 1e2);
        for (double& v : q) v *= gamma;
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        double beta = pairs[i].rho * dot(pairs[i].y, q);
        for (std::size_t k = 0; k < q.size(); ++k)
            q[k] += (alpha[i] - beta) * pairs[i].s[k];
    }
    for (double& v : q) v = -v;
    return q;
}

} // namespace

DadpRun solve_dadp(const Valley& v, const DadpConfig& cfg) {
    check_valley(v);
    int n = v.topology.n_dams;
    DadpRun run;
    WallTimer total;

    DualState dual = make_dual_state(v);
    std::size_t n_links = dual.link_dams.size();

    std::vector<std::vector<double>> z_levels =
        cfg.z_levels.empty() ? default_z_levels(v) : cfg.z_levels;
    if (z_levels.size() != n_links)
        throw ValidationError("dadp needs one z-level list per link");
    for (const auto& zl : z_levels) {
        if (zl.empty()) throw ValidationError("empty z-level list");
        for (double z : zl)
            if (z < 0.0) throw ValidationError("z levels must be nonnegative");
    }
    std::vector<std::vector<double>> knots = cfg.knots;
    if (knots.empty()) {
        for (const Dam& d : v.dams)
            knots.push_back(make_knots(d.x_min, d.x_max, cfg.knots_per_dam));
    }
    if (static_cast<int>(knots.size()) != n)
        throw ValidationError("dadp needs one knot vector per dam");

    double tol = cfg.tolerance;
    if (tol < 0.0) {
        double mean_cap = 0.0;
        for (const Dam& d : v.dams) mean_cap += d.x_max;
        mean_cap /= n;
        tol = 1e-3 * mean_cap;
    }

    auto solve_all = [&](const DualState& ds) {
        std::vector<SubproblemSolution> subs(n);
        parallel_for(static_cast<std::size_t>(n), cfg.workers, [&](std::size_t i) {
            subs[i] = solve_subproblem(v, static_cast<int>(i), ds, z_levels, knots[i]);
        });
        return subs;
    };
    auto total_value = [](const std::vector<SubproblemSolution>& subs) {
        double s = 0.0;
        for (const auto& sub : subs) s += sub.value;
        return s;
    };

    WallTimer iter_timer;
    std::vector<SubproblemSolution> subs = solve_all(dual);
    DualGradient gr = dual_gradient(v, subs, dual, z_levels, cfg);

    // Track the best multipliers seen (highest dual value) so a non-converged
    // run still returns its best iterate.
    std::vector<std::vector<double>> best_lambda = dual.lambda;
    double best_value = gr.dual_value;

    std::deque<LbfgsPair> pairs;
    int escapes = 0; // consecutive iterations where the line search failed

    int k = 0;
    while (true) {
        run.lambda_history.push_back(dual.lambda);
        run.log.push_back(DadpIterLog{k, gr.dual_value, gr.grad_inf, iter_timer.seconds()});
        if (gr.dual_value > best_value) {
            best_value = gr.dual_value;
            best_lambda = dual.lambda;
        }
        if (gr.grad_inf <= tol) {
            run.converged = true;
            break;
        }
        if (k >= cfg.max_iterations) break;
        if (cfg.deadline.expired())
            throw BudgetError("dadp deadline exceeded at iteration " + std::to_string(k));
        iter_timer = WallTimer();

        if (cfg.optimizer == DadpConfig::Optimizer::FixedStep) {
            for (std::size_t l = 0; l < n_links; ++l)
                for (int t = 0; t < v.noise.horizon; ++t)
                    dual.lambda[l][t] += cfg.fixed_step_rho * gr.g[l][t];
            subs = solve_all(dual);
            gr = dual_gradient(v, subs, dual, z_levels, cfg);
        } else {
            std::vector<double> lam0 = flatten(dual.lambda);
            std::vector<double> gf = flatten(gr.g);
            for (double& x : gf) x = -x; // gradient of f = -dual
            double f0 = -gr.dual_value;

            std::vector<double> dir = lbfgs_direction(pairs, gf);
            if (dot(dir, gf) >= 0.0) {
                dir = gf;
                for (double& x : dir) x = -x;
            }
            bool accepted = false;
            std::vector<double> lam_try(lam0.size());
            std::vector<SubproblemSolution> subs_try;
            double f_try = 0.0;
            for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
                if (attempt == 1) {
                    // Steepest-ascent retry when the quasi-Newton direction fails.
                    dir = gf;
                    for (double& x : dir) x = -x;
                }
                double slope = dot(dir, gf);
                if (slope >= 0.0) continue;
                double dir_inf = std::max(inf_norm(dir), 1e-12);
                double alpha = pairs.empty() || attempt == 1
                                   ? cfg.initial_step / dir_inf
                                   : 1.0;
                // A sufficient-decrease step that barely moves the multipliers
                // is a crawl along a kink, not progress; let the subgradient
                // escape handle it instead.
                double floor = 1e-3 * cfg.initial_step;
                for (int trial = 0; trial < 30 && alpha * dir_inf >= floor; ++trial) {
                    for (std::size_t i = 0; i < lam0.size(); ++i)
                        lam_try[i] = lam0[i] + alpha * dir[i];
                    DualState ds_try = dual;
                    unflatten(lam_try, ds_try.lambda);
                    subs_try = solve_all(ds_try);
                    f_try = -total_value(subs_try);
                    if (f_try <= f0 + 1e-4 * alpha * slope) {
                        accepted = true;
                        dual.lambda = ds_try.lambda;
                        break;
                    }
                    alpha *= 0.5;
                }
            }
            if (!accepted) {
                // Kink or tie plateau of the piecewise-linear dual: no single
                // direction certifies sufficient increase even though the
                // maximum lies elsewhere. Take a diminishing normalized
                // subgradient step and drop curvature pairs harvested there.
                double scale = std::max(inf_norm(gf), 1e-12);
                double sigma = cfg.initial_step / std::sqrt(1.0 + escapes);
                for (std::size_t i = 0; i < lam0.size(); ++i)
                    lam_try[i] = lam0[i] - sigma * gf[i] / scale;
                unflatten(lam_try, dual.lambda);
                pairs.clear();
                ++escapes;
                subs = solve_all(dual);
                gr = dual_gradient(v, subs, dual, z_levels, cfg);
            } else {
                escapes = 0;
                subs = std::move(subs_try);
                gr = dual_gradient(v, subs, dual, z_levels, cfg);
                std::vector<double> gf_new = flatten(gr.g);
                for (double& x : gf_new) x = -x;
                LbfgsPair pair;
                pair.s.resize(lam0.size());
                pair.y.resize(lam0.size());
                std::vector<double> lam_new = flatten(dual.lambda);
                for (std::size_t i = 0; i < lam0.size(); ++i) {
                    pair.s[i] = lam_new[i] - lam0[i];
                    pair.y[i] = gf_new[i] - gf[i];
                }
                double ys = dot(pair.y, pair.s);
                // Skip curvature pairs harvested at kinks of the piecewise-linear dual.
                if (ys > 1e-10 * std::sqrt(dot(pair.s, pair.s)) * std::sqrt(dot(pair.y, pair.y))) {
                    pair.rho = 1.0 / ys;
                    pairs.push_back(std::move(pair));
                    if (static_cast<int>(pairs.size()) > cfg.lbfgs_memory) pairs.pop_front();
                }
            }
        }
        ++k;
    }

    if (!run.converged && best_value > gr.dual_value) {
        dual.lambda = best_lambda;
        subs = solve_all(dual);
        gr = dual_gradient(v, subs, dual, z_levels, cfg);
    }

    dual.gradient = gr.g;
    dual.iterations = k;
    dual.dual_value = gr.dual_value;
    dual.converged = run.converged;

    run.dual = std::move(dual);
    run.subs = std::move(subs);
    run.dual_value = gr.dual_value;
    run.values.kind = "dadp-sum";
    run.values.horizon = v.noise.horizon;
    run.values.n_dams = n;
    run.values.per_dam.reserve(n);
    for (int i = 0; i < n; ++i) run.values.per_dam.push_back(run.subs[i].vfs);
    run.total_seconds = total.seconds();
    return run;
}

} // namespace valleyopt
