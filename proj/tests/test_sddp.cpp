#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "valleyopt/dp.hpp"
#include "valleyopt/policy.hpp"
#include "valleyopt/sddp.hpp"

using namespace valleyopt;

namespace {

std::vector<std::vector<double>> unit_knots(const Valley& v) {
    std::vector<std::vector<double>> knots;
    for (const Dam& d : v.dams)
        knots.push_back(make_knots(d.x_min, d.x_max,
                                   static_cast<int>(d.x_max - d.x_min) + 1));
    return knots;
}

// Sample every DP grid as anchored finite-difference cuts (valid supports of
// a convex piecewise-linear value function with kinks on the knots).
std::vector<CutPool> pools_from_dp(const DpRun& run) {
    std::vector<CutPool> pools;
    for (const ValueFunction& vf : run.values.stages) {
        const Grid& g = std::get<Grid>(vf.repr);
        const std::vector<double>& k = g.knots[0];
        CutPool pool;
        pool.capacity = 1000;
        for (std::size_t j = 0; j < k.size(); ++j) {
            std::size_t a = j == 0 ? 0 : j - 1;
            std::size_t b = j + 1 == k.size() ? j : j + 1;
            double slope = (g.values[b] - g.values[a]) / (k[b] - k[a]);
            pool.add_cut(g.values[j] - slope * k[j], {slope});
        }
        pools.push_back(std::move(pool));
    }
    return pools;
}

} // namespace

TEST_CASE("sddp_forward: empty pools act myopically") {
    // Deterministic instance; zero continuation floor means each stage picks
    // the feasible control with the lowest immediate cost.
    Valley v = oracles::single_dam(10, 5, {0, 1, 2}, 3, {1, 1, 1}, {2, 3, 1});
    std::vector<CutPool> pools(3);
    SddpTrajectory traj = sddp_forward(v, pools, {0, 0, 0});
    double x = 5.0, myopic_cost = 0.0;
    for (int t = 0; t < 3; ++t) {
        const NoiseAtom& w = v.noise.stages[t][0];
        double best_u = 0.0, best = 1e300;
        for (double u : control_range(v.dams[0], x, w.inflows[0], 0.0)) {
            double c = stage_cost(v.dams[0], u, w.prices[0]);
            if (c < best) {
                best = c;
                best_u = u;
            }
        }
        myopic_cost += best;
        x = dam_step(v.dams[0], x, best_u, w.inflows[0], 0.0).x_next;
        CHECK(traj.states[t + 1][0] == x);
    }
    myopic_cost += final_cost(v.dams[0], x);
    CHECK(traj.cost == doctest::Approx(myopic_cost).epsilon(1e-12));
}

TEST_CASE("sddp_forward: exact DP cuts reproduce the DP trajectory") {
    Valley v = oracles::single_dam(10, 5, {0, 1, 2}, 2, {1, 1}, {2, 1});
    DpConfig cfg;
    cfg.knots = unit_knots(v);
    DpRun run = solve_dp(v, cfg);
    std::vector<CutPool> pools = pools_from_dp(run);
    SddpTrajectory traj = sddp_forward(v, pools, {0, 0});

    std::vector<double> x{5.0};
    for (int t = 0; t < 2; ++t) {
        OneStepDecision dec = dp_feedback(v, run.values, t, x, v.noise.stages[t][0]);
        x[0] = dec.transitions[0].x_next;
        CHECK(traj.states[t + 1][0] == x[0]);
    }
    CHECK(traj.cost == doctest::Approx(run.value_at_x0).epsilon(1e-12));
}

TEST_CASE("sddp_forward: deterministic per scenario") {
    Valley v = oracles::single_dam(10, 5, {0, 1, 2}, 2, {1, 1}, {2, 1});
    std::vector<CutPool> pools(2);
    SddpTrajectory a = sddp_forward(v, pools, {0, 0});
    SddpTrajectory b = sddp_forward(v, pools, {0, 0});
    CHECK(a.states == b.states);
    CHECK(a.cost == b.cost);
}

TEST_CASE("sddp_backward: flat value function yields a constant zero cut") {
    Valley v = oracles::single_dam(10, 5, {0, 1, 2}, 1, {0}, {0});
    std::vector<CutPool> pools(1);
    SddpTrajectory traj;
    traj.states = {{5.0}, {5.0}};
    traj.atoms = {0};
    sddp_backward(v, pools, unit_knots(v), {traj});
    REQUIRE(pools[0].cuts.size() == 1);
    CHECK(pools[0].cuts[0].gradient[0] == 0.0);
    CHECK(pools[0].cuts[0].intercept == 0.0);
}

TEST_CASE("sddp_backward: centered difference recovers a linear slope") {
    // At integer states the one-step value is -3x (turbinate everything at
    // price 3); interior knots use centered differences.
    std::vector<double> levels;
    for (int u = 0; u <= 10; ++u) levels.push_back(u);
    Valley v = oracles::single_dam(10, 5, levels, 1, {0}, {3});
    std::vector<CutPool> pools(1);
    SddpTrajectory traj;
    traj.states = {{5.0}, {0.0}};
    traj.atoms = {0};
    sddp_backward(v, pools, unit_knots(v), {traj});
    REQUIRE(pools[0].cuts.size() == 1);
    CHECK(pools[0].cuts[0].gradient[0] == doctest::Approx(-3.0).epsilon(1e-9));
    // Anchored at the visited state: intercept + slope*5 = -15.
    CHECK(pools[0].cuts[0].intercept + 5.0 * pools[0].cuts[0].gradient[0] ==
          doctest::Approx(-15.0).epsilon(1e-9));

    SUBCASE("upper boundary state uses the one-sided difference") {
        std::vector<CutPool> edge(1);
        SddpTrajectory at_cap;
        at_cap.states = {{10.0}, {0.0}};
        at_cap.atoms = {0};
        sddp_backward(v, edge, unit_knots(v), {at_cap});
        REQUIRE(edge[0].cuts.size() == 1);
        CHECK(edge[0].cuts[0].gradient[0] == doctest::Approx(-3.0).epsilon(1e-9));
    }
    SUBCASE("lower boundary state uses the one-sided difference") {
        std::vector<CutPool> edge(1);
        SddpTrajectory at_floor;
        at_floor.states = {{0.0}, {0.0}};
        at_floor.atoms = {0};
        sddp_backward(v, edge, unit_knots(v), {at_floor});
        REQUIRE(edge[0].cuts.size() == 1);
        CHECK(edge[0].cuts[0].gradient[0] == doctest::Approx(-3.0).epsilon(1e-9));
    }
}

TEST_CASE("solve_sddp: deterministic single dam lands within 1% of the optimum") {
    Valley v =
        oracles::single_dam(10, 5, {0, 1, 2}, 3, {1, 1, 1}, {3, 1, 2}, 4.0, 2.0);
    DpConfig dc;
    dc.knots = unit_knots(v);
    DpRun dp = solve_dp(v, dc);

    SddpConfig sc;
    sc.n_iterations = 25;
    sc.forward_batch = 8;
    sc.cut_capacity = 100;
    sc.fd_knots = unit_knots(v);
    sc.rng_seed = 11;
    SddpRun run = solve_sddp(v, sc);
    REQUIRE(!run.log.empty());
    double final_cost_estimate = run.log.back().mean_forward_cost;
    CHECK(std::abs(final_cost_estimate - dp.value_at_x0) <=
          0.01 * std::abs(dp.value_at_x0));
}

TEST_CASE("solve_sddp: zero iterations leave the pools empty") {
    Valley v = oracles::single_dam(10, 5, {0, 1, 2}, 2, {1, 1}, {2, 1});
    SddpConfig sc;
    sc.n_iterations = 0;
    sc.fd_knots = unit_knots(v);
    SddpRun run = solve_sddp(v, sc);
    CHECK(run.log.empty());
    for (const ValueFunction& vf : run.values.stages)
        CHECK(std::get<CutPool>(vf.repr).cuts.empty());
    // Forward under the empty pools equals the myopic policy cost.
    std::vector<CutPool> pools(2);
    SddpTrajectory traj = sddp_forward(v, pools, {0, 0});
    double x = 5.0, myopic = 0.0;
    for (int t = 0; t < 2; ++t) {
        const NoiseAtom& w = v.noise.stages[t][0];
        double best = 1e300, best_u = 0;
        for (double u : control_range(v.dams[0], x, w.inflows[0], 0.0)) {
            double c = stage_cost(v.dams[0], u, w.prices[0]);
            if (c < best) {
                best = c;
                best_u = u;
            }
        }
        myopic += best;
        x = dam_step(v.dams[0], x, best_u, w.inflows[0], 0.0).x_next;
    }
    myopic += final_cost(v.dams[0], x);
    CHECK(traj.cost == doctest::Approx(myopic).epsilon(1e-12));
}

TEST_CASE("solve_sddp: same seed gives bitwise-identical pools; cuts all finite") {
    NoiseAtom a, b;
    a.p = 0.5;
    a.inflows = {1.0, 0.0};
    a.prices = {2.0, 2.0};
    b.p = 0.5;
    b.inflows = {0.0, 2.0};
    b.prices = {4.0, 4.0};
    Valley v;
    v.topology = make_topology({1, -1});
    for (int i = 0; i < 2; ++i) {
        Dam d;
        d.id = i + 1;
        d.x_min = 0;
        d.x_max = 8;
        d.u_min = 0;
        d.u_max = 2;
        d.control_levels = {0, 1, 2};
        d.x0 = 4;
        d.x_target = 3;
        d.penalty_a = 1.0;
        d.epsilon = 0.125;
        v.dams.push_back(std::move(d));
    }
    v.noise.horizon = 3;
    for (int t = 0; t < 3; ++t) v.noise.stages.push_back({a, b});
    check_valley(v);

    SddpConfig sc;
    sc.n_iterations = 5;
    sc.forward_batch = 4;
    sc.fd_knots = unit_knots(v);
    sc.rng_seed = 77;
    SddpRun r1 = solve_sddp(v, sc);
    SddpRun r2 = solve_sddp(v, sc);
    REQUIRE(r1.values.stages.size() == r2.values.stages.size());
    for (std::size_t t = 0; t < r1.values.stages.size(); ++t) {
        const CutPool& p1 = std::get<CutPool>(r1.values.stages[t].repr);
        const CutPool& p2 = std::get<CutPool>(r2.values.stages[t].repr);
        REQUIRE(p1.cuts.size() == p2.cuts.size());
        CHECK(p1.cuts.size() <= static_cast<std::size_t>(sc.cut_capacity));
        for (std::size_t c = 0; c < p1.cuts.size(); ++c) {
            CHECK(p1.cuts[c].intercept == p2.cuts[c].intercept);
            CHECK(p1.cuts[c].gradient == p2.cuts[c].gradient);
            CHECK(std::isfinite(p1.cuts[c].intercept));
            for (double g : p1.cuts[c].gradient) CHECK(std::isfinite(g));
        }
    }
}

TEST_CASE("solve_sddp: 2-dam stochastic instance simulates within 2% of dp") {
    NoiseAtom a, b;
    a.p = 0.375;
    a.inflows = {2.0, 0.0};
    a.prices = {3.0, 3.0};
    b.p = 0.625;
    b.inflows = {0.0, 1.0};
    b.prices = {5.0, 5.0};
    Valley v;
    v.topology = make_topology({1, -1});
    for (int i = 0; i < 2; ++i) {
        Dam d;
        d.id = i + 1;
        d.x_min = 0;
        d.x_max = 8;
        d.u_min = 0;
        d.u_max = 2;
        d.control_levels = {0, 1, 2};
        d.x0 = 4;
        d.x_target = 4;
        d.penalty_a = 2.0;
        d.epsilon = 0.0;
        v.dams.push_back(std::move(d));
    }
    v.noise.horizon = 4;
    for (int t = 0; t < 4; ++t) v.noise.stages.push_back({a, b});
    check_valley(v);

    DpConfig dc;
    dc.knots = unit_knots(v);
    DpRun dp = solve_dp(v, dc);

    SddpConfig sc;
    sc.n_iterations = 25;
    sc.forward_batch = 8;
    sc.cut_capacity = 100;
    sc.fd_knots = unit_knots(v);
    sc.rng_seed = 5;
    SddpRun run = solve_sddp(v, sc);

    GlobalValue gv = make_global_value(v, run.values);
    SimReport rep = simulate(v, gv, 4000, 123);
    double dp_payoff = -dp.value_at_x0;
    CHECK(std::abs(rep.mean_payoff - dp_payoff) <= 0.02 * std::abs(dp_payoff));
}
