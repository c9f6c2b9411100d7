#include "valleyopt/generate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "valleyopt/dadp.hpp"
#include "valleyopt/dp.hpp"
#include "valleyopt/rng.hpp"
#include "valleyopt/sddp.hpp"

namespace valleyopt {

namespace {

std::vector<int> shape_parents(const std::string& shape, int n) {
    std::vector<int> parent(n, -1);
    if (shape == "chain") {
        for (int i = 0; i + 1 < n; ++i) parent[i] = i + 1; // outlet = last dam
    } else if (shape == "tree") {
        for (int j = 1; j < n; ++j) parent[j] = (j - 1) / 2; // outlet = dam 0
    } else {
        throw ValidationError("unknown valley shape: " + shape);
    }
    return parent;
}

std::vector<int> depths(const ValleyTopology& topo) {
    std::vector<int> depth(topo.n_dams, 0);
    for (auto it = topo.topo_order.rbegin(); it != topo.topo_order.rend(); ++it)
        for (int c : topo.children[*it]) depth[c] = depth[*it] + 1;
    return depth;
}

constexpr double kPi = 3.14159265358979323846;

Valley generate_academic(const GenerateConfig& cfg, bool heterogeneous) {
    int n = cfg.n_dams;
    int T = cfg.horizon > 0 ? cfg.horizon : 12;
    Valley v;
    v.topology = make_topology(shape_parents(cfg.shape, n));
    auto depth = depths(v.topology);
    int max_depth = *std::max_element(depth.begin(), depth.end());

    Rng rng(mix_seed(cfg.seed, 0xacade31c, n));
    std::vector<double> inflow_mean(n);
    for (int i = 0; i < n; ++i) {
        int r = max_depth - depth[i]; // 0 upstream-most, grows downstream
        Dam d;
        d.id = i + 1;
        d.x_min = 0.0;
        d.x_max = heterogeneous ? (r % 2 == 0 ? 50.0 : 5.0) : 40.0;
        d.u_min = 0.0;
        d.u_max = 6.0 + 3.0 * std::min(r, 4);
        int n_levels = std::min(4 + 2 * r, 10);
        d.control_levels = make_knots(0.0, d.u_max, n_levels);
        d.x0 = d.x_max / 2.0;
        d.x_target = d.x_max / 2.0;
        d.penalty_a = 2.0;
        d.epsilon = 0.05;
        v.dams.push_back(std::move(d));
        inflow_mean[i] =
            (2.0 + 1.5 * std::min(depth[i], 4)) * (0.85 + 0.3 * rng.next_double());
    }

    double price_phase = 2.0 * kPi * rng.next_double();
    double inflow_phase = 2.0 * kPi * rng.next_double();
    const double factors[3] = {0.4, 1.0, 1.6};
    const double probs[3] = {0.25, 0.5, 0.25};
    v.noise.horizon = T;
    for (int t = 0; t < T; ++t) {
        double season = 0.8 + 0.4 * std::sin(2.0 * kPi * t / T + inflow_phase);
        double price = 10.0 + 5.0 * std::sin(2.0 * kPi * t / T + price_phase) +
                       2.0 * rng.next_double();
        std::vector<NoiseAtom> atoms;
        for (int k = 0; k < 3; ++k) {
            NoiseAtom a;
            a.p = probs[k];
            a.inflows.resize(n);
            a.prices.assign(n, price);
            for (int i = 0; i < n; ++i) a.inflows[i] = inflow_mean[i] * factors[k] * season;
            atoms.push_back(std::move(a));
        }
        v.noise.stages.push_back(std::move(atoms));
    }
    check_valley(v);
    return v;
}

// Desk instances are small integer cascades built so that price decomposition
// can coordinate exactly: headwater dams (the leaves) hold scarce water behind
// a quadratic storage target, every carrier downstream has zero local inflow
// and a turbine capacity equal to the steady upstream supply, and the outlet
// sells at prices strictly above every headwater's hold value. The dual
// optimum then sits on a facet where each subproblem's minimizer is unique,
// flows are noise-independent integers, and the expected coupling deviation
// vanishes identically. Noise lives in the outlet's stage prices; inflows are
// deterministic so all reachable volumes stay on unit-spaced knots.
Valley generate_desk(const GenerateConfig& cfg) {
    int n = cfg.n_dams;
    int T = cfg.horizon > 0 ? cfg.horizon : 4;
    Valley v;
    v.topology = make_topology(shape_parents(cfg.shape, n));

    Rng rng(mix_seed(cfg.seed, 0xde5c, n));
    auto draw = [&](int m) { return static_cast<int>(rng.next_u64() % m); };

    // Steady per-stage flow rate: leaves pick 1..2, carriers pass the sum of
    // their children (computed in topological order, leaves first).
    std::vector<int> rate(n, 0);
    std::vector<std::vector<double>> inflow(n, std::vector<double>(T, 0.0));
    std::vector<bool> leaf(n, false);
    for (int i : v.topology.topo_order) {
        leaf[i] = v.topology.children[i].empty();
        if (leaf[i]) {
            rate[i] = 1 + draw(2);
        } else {
            for (int c : v.topology.children[i]) rate[i] += rate[c];
        }
    }

    for (int i = 0; i < n; ++i) {
        Dam d;
        d.id = i + 1;
        d.x_min = 0.0;
        d.u_min = 0.0;
        d.u_max = rate[i];
        for (int u = 0; u <= rate[i]; ++u) d.control_levels.push_back(u);
        d.epsilon = 0.0;
        if (leaf[i]) {
            // Headwater: starts with T stages' worth of releases, receives
            // T*rate - shortfall units of deterministic inflow, and pays a
            // quadratic penalty for ending below its starting volume. The
            // marginal hold value a*(2*shortfall - 1) stays strictly below the
            // outlet's price floor so a positive multiplier can buy the water.
            int shortfall = std::min(1 + draw(2), T * rate[i]); // usually 1..2
            int penalty = shortfall == 2 ? 1 : 1 + draw(2); // keep a*(2k-1) <= 3
            d.penalty_a = penalty;
            d.x0 = static_cast<double>(T * rate[i]);
            d.x_target = d.x0;
            int total_in = T * rate[i] - shortfall;
            for (int t = 0; t < T; ++t) inflow[i][t] = rate[i];
            for (int k = 0; k < shortfall; ++k) {
                int t = draw(T);
                while (inflow[i][t] <= 0.0) t = (t + 1) % T;
                inflow[i][t] -= 1.0;
            }
            d.x_max = d.x0 + static_cast<double>(total_in);
        } else {
            // Carrier / outlet: pure pass-through with no local inflow.
            d.penalty_a = 0.0;
            d.x0 = 0.0;
            d.x_target = 0.0;
            d.x_max = static_cast<double>(T * rate[i]);
        }
        v.dams.push_back(std::move(d));
    }

    int outlet = -1;
    for (int i = 0; i < n; ++i)
        if (v.topology.parent[i] < 0) outlet = i;

    v.noise.horizon = T;
    for (int t = 0; t < T; ++t) {
        int n_atoms = 2 + draw(2);
        // Probabilities in exact eighths, each at least 1/8.
        std::vector<int> eighths;
        if (n_atoms == 2) {
            int a = 1 + draw(7);
            eighths = {a, 8 - a};
        } else {
            int a = 1 + draw(6);
            int b = 1 + draw(7 - a);
            eighths = {a, b, 8 - a - b};
        }
        std::vector<NoiseAtom> atoms;
        for (int k = 0; k < n_atoms; ++k) {
            NoiseAtom a;
            a.p = eighths[k] / 8.0;
            a.prices.assign(n, 1.0);          // headwaters and carriers
            a.prices[outlet] = 6.0 + draw(4); // 6..9, varies per stage and atom
            a.inflows.resize(n);
            for (int i = 0; i < n; ++i) a.inflows[i] = inflow[i][t];
            atoms.push_back(std::move(a));
        }
        v.noise.stages.push_back(std::move(atoms));
    }
    check_valley(v);
    return v;
}

} // namespace

Valley generate_valley(const GenerateConfig& cfg) {
    if (cfg.n_dams < 1) throw ValidationError("valley needs at least one dam");
    if (cfg.profile == "academic") return generate_academic(cfg, false);
    if (cfg.profile == "realistic") return generate_academic(cfg, true);
    if (cfg.profile == "desk") return generate_desk(cfg);
    throw ValidationError("unknown generator profile: " + cfg.profile);
}

std::vector<std::vector<double>> integer_z_levels(const Valley& v) {
    int n = v.topology.n_dams;
    std::vector<double> a_max(n, 0.0);
    for (const auto& stage : v.noise.stages)
        for (const NoiseAtom& w : stage)
            for (int i = 0; i < n; ++i) a_max[i] = std::max(a_max[i], w.inflows[i]);
    // Realizable outflow of a dam never exceeds u_max + its own worst spill,
    // and spill is bounded by inflow + upstream water received.
    std::vector<double> zcap(n, 0.0);
    for (int i : v.topology.topo_order)
        for (int c : v.topology.children[i])
            zcap[i] += v.dams[c].u_max + a_max[c] + zcap[c];
    std::vector<std::vector<double>> out;
    for (int i = 0; i < n; ++i) {
        if (v.topology.children[i].empty()) continue;
        int cap = static_cast<int>(std::floor(zcap[i] + 0.5));
        std::vector<double> levels(cap + 1);
        for (int z = 0; z <= cap; ++z) levels[z] = z;
        out.push_back(std::move(levels));
    }
    return out;
}

std::vector<BenchRow> bench_scaling(const BenchConfig& cfg) {
    std::vector<BenchRow> rows;
    for (const std::string& solver : cfg.solvers) {
        for (int n : cfg.dam_counts) {
            GenerateConfig gc;
            gc.shape = cfg.shape;
            gc.n_dams = n;
            gc.seed = cfg.seed;
            gc.profile = cfg.profile;
            gc.horizon = cfg.horizon;
            Valley v = generate_valley(gc);

            BenchRow row;
            row.solver = solver;
            row.shape = cfg.shape;
            row.dams = n;
            double best_seconds = 0.0;
            for (int rep = 0; rep < std::max(1, cfg.repeats); ++rep) {
                Deadline deadline;
                if (cfg.timeout_seconds > 0)
                    deadline = Deadline::after_seconds(cfg.timeout_seconds);
                WallTimer timer;
                try {
                    if (solver == "dp") {
                        DpConfig dc;
                        dc.knots = default_knots(v, cfg.dp_knots);
                        dc.work_budget = cfg.dp_budget;
                        dc.workers = cfg.workers;
                        dc.deadline = deadline;
                        DpRun run = solve_dp(v, dc);
                        row.payoff_value = -run.value_at_x0;
                    } else if (solver == "dadp") {
                        DadpConfig dc;
                        dc.knots_per_dam = cfg.dadp_knots;
                        dc.max_iterations = cfg.dadp_iterations;
                        dc.gradient_samples = cfg.dadp_samples;
                        dc.tolerance = 0.0; // fixed iteration count for timing
                        dc.optimizer = DadpConfig::Optimizer::FixedStep;
                        dc.fixed_step_rho = cfg.dadp_rho;
                        dc.rng_seed = cfg.seed;
                        dc.workers = cfg.workers;
                        dc.deadline = deadline;
                        DadpRun run = solve_dadp(v, dc);
                        row.payoff_value = -run.dual_value;
                    } else if (solver == "sddpd") {
                        SddpConfig sc;
                        sc.n_iterations = cfg.sddp_iterations;
                        sc.forward_batch = cfg.sddp_batch;
                        sc.cut_capacity = cfg.sddp_cuts;
                        sc.fd_knots = default_knots(v, cfg.sddp_knots);
                        sc.rng_seed = cfg.seed;
                        sc.workers = cfg.workers;
                        sc.deadline = deadline;
                        SddpRun run = solve_sddp(v, sc);
                        row.payoff_value =
                            run.log.empty() ? 0.0 : -run.log.back().mean_forward_cost;
                    } else {
                        throw ValidationError("unknown bench solver: " + solver);
                    }
                    row.status = "ok";
                } catch (const BudgetError&) {
                    row.status = deadline.expired() ? "timeout" : "budget";
                    row.payoff_value = 0.0;
                }
                double secs = timer.seconds();
                if (rep == 0 || secs < best_seconds) best_seconds = secs;
                if (row.status != "ok") break;
            }
            row.seconds = best_seconds;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows, const TimingPolicy& tp) {
    std::ostringstream out;
    out << "solver,shape,dams,status,seconds,payoff_value\n";
    for (const BenchRow& r : rows) {
        out << r.solver << ',' << r.shape << ',' << r.dams << ',' << r.status << ','
            << fmt_double(tp.filter(r.seconds)) << ',';
        if (r.status == "ok") out << fmt_double(r.payoff_value);
        out << '\n';
    }
    return out.str();
}

} // namespace valleyopt
