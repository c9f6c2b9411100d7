#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "valleyopt/model.hpp"
#include "valleyopt/rng.hpp"

using namespace valleyopt;

namespace {

Dam basic_dam(double x_min, double x_max, std::vector<double> levels) {
    Dam d;
    d.id = 1;
    d.x_min = x_min;
    d.x_max = x_max;
    d.u_min = levels.front();
    d.u_max = levels.back();
    d.control_levels = std::move(levels);
    d.x0 = x_min;
    return d;
}

} // namespace

TEST_CASE("dam_step: hand-computed transitions") {
    Dam d = basic_dam(0, 10, {0, 1, 2, 3});
    SUBCASE("no flows: identity") {
        StageTransition tr = dam_step(d, 5, 0, 0, 0);
        CHECK(tr.x_next == 5.0);
        CHECK(tr.spill == 0.0);
        CHECK(tr.outflow == 0.0);
    }
    SUBCASE("overflow passes through") {
        StageTransition tr = dam_step(d, 10, 0, 5, 0);
        CHECK(tr.spill == 5.0);
        CHECK(tr.x_next == 10.0);
        CHECK(tr.outflow == 5.0);
    }
    SUBCASE("partial spill with upstream water") {
        StageTransition tr = dam_step(d, 8, 3, 2, 4);
        CHECK(tr.spill == 1.0); // max{0, 8-3+2+4-10}
        CHECK(tr.x_next == 10.0);
        CHECK(tr.outflow == 4.0);
    }
}

TEST_CASE("dam_step: rejects controls outside the feasible range") {
    Dam d = basic_dam(0, 10, {0, 1, 2, 3});
    CHECK_THROWS_AS(dam_step(d, 1, 3, 0, 0), InfeasibleControlError); // drains below x_min
    CHECK_THROWS_AS(dam_step(d, 5, 2.5, 0, 0), InfeasibleControlError); // not a level
}

TEST_CASE("control_range: prefix truncation") {
    SUBCASE("bound inactive") {
        Dam d = basic_dam(0, 10, {0, 1, 2, 3});
        CHECK(control_range(d, 5, 0, 0) == std::vector<double>{0, 1, 2, 3});
    }
    SUBCASE("water-availability bound") {
        Dam d = basic_dam(0, 10, {0, 1, 2, 3});
        CHECK(control_range(d, 1, 0, 0) == std::vector<double>{0, 1});
    }
    SUBCASE("nonzero lower volume bound") {
        Dam d = basic_dam(1, 10, {0, 2, 4});
        // min{u_max, x+a+z-x_min} = min{4, 3+1-1} = 3 excludes 4
        CHECK(control_range(d, 3, 1, 0) == std::vector<double>{0, 2});
    }
    SUBCASE("empty feasible set is instance-data error") {
        Dam d = basic_dam(5, 10, {2, 3});
        d.u_min = 2;
        CHECK_THROWS_AS(control_range(d, 5, 0, 0), ValidationError);
    }
}

TEST_CASE("stage_cost and final_cost: hand-computed values") {
    Dam d;
    d.epsilon = 0.01;
    CHECK(stage_cost(d, 0, 7) == 0.0);
    d.epsilon = 0.0;
    CHECK(stage_cost(d, 2, 3) == -6.0);
    d.epsilon = 0.5;
    CHECK(stage_cost(d, 2, 3) == -4.0);

    Dam f;
    f.penalty_a = 2.0;
    f.x_target = 5.0;
    CHECK(final_cost(f, 5.0) == 0.0);
    CHECK(final_cost(f, 8.0) == 0.0);
    CHECK(final_cost(f, 3.0) == 8.0);
}

TEST_CASE("model kernel properties over randomized dams") {
    Rng rng(20240817);
    int spills_seen = 0;
    for (int trial = 0; trial < 200; ++trial) {
        double x_min = 5.0 * rng.next_double();
        double x_max = x_min + 1.0 + 10.0 * rng.next_double();
        int n_levels = 2 + static_cast<int>(rng.next_u64() % 5);
        std::vector<double> levels{0.0};
        for (int j = 1; j < n_levels; ++j)
            levels.push_back(levels.back() + 0.25 + 3.0 * rng.next_double());
        Dam d = basic_dam(x_min, x_max, levels);
        double x = x_min + (x_max - x_min) * rng.next_double();
        double a = 4.0 * rng.next_double();
        double z = 4.0 * rng.next_double();

        for (double u : control_range(d, x, a, z)) {
            StageTransition tr = dam_step(d, x, u, a, z);
            // Water balance to ulp scale: x' - x = a + z - u - s.
            double lhs = tr.x_next - x;
            double rhs = ((a + z) - u) - tr.spill;
            CHECK(std::abs(lhs - rhs) <= 1e-9 * (1.0 + std::abs(x) + a + z));
            CHECK(tr.outflow == u + tr.spill);
            CHECK(tr.x_next >= d.x_min);
            CHECK(tr.x_next <= d.x_max);
            if (tr.spill > 0) {
                CHECK(tr.x_next == d.x_max);
                ++spills_seen;
            }
        }
        // Convexity of the stage cost in u over equispaced triples.
        d.epsilon = rng.next_double();
        double p = 10.0 * rng.next_double();
        double u0 = rng.next_double(), h = 0.5 + rng.next_double();
        double second_diff = stage_cost(d, u0 + 2 * h, p) - 2 * stage_cost(d, u0 + h, p) +
                             stage_cost(d, u0, p);
        CHECK(second_diff >= -1e-12);
        // Final penalty: convex, nonincreasing then flat.
        d.penalty_a = 2.0 * rng.next_double();
        d.x_target = x_min + (x_max - x_min) * rng.next_double();
        double y0 = x_min + (x_max - x_min) * rng.next_double();
        double y1 = x_min + (x_max - x_min) * rng.next_double();
        if (y0 > y1) std::swap(y0, y1);
        CHECK(final_cost(d, y0) >= final_cost(d, y1));
    }
    CHECK(spills_seen > 0); // the sweep actually exercised the spill branch
}

TEST_CASE("u = 0 is always feasible when u_min = 0") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        Dam d = basic_dam(3.0 * rng.next_double(), 20, {0, 1});
        double x = d.x_min + (d.x_max - d.x_min) * rng.next_double();
        CHECK(control_feasible(d, x, 0.0, 4.0 * rng.next_double(), 0.0));
    }
}

TEST_CASE("make_topology: chains, trees, and bad input") {
    SUBCASE("chain order") {
        ValleyTopology t = make_topology({1, 2, 3, -1});
        CHECK(t.topo_order == std::vector<int>{0, 1, 2, 3});
        CHECK(t.children[1] == std::vector<int>{0});
        CHECK(t.children[3] == std::vector<int>{2});
    }
    SUBCASE("two children merge") {
        ValleyTopology t = make_topology({2, 2, -1});
        CHECK(t.children[2] == std::vector<int>{0, 1});
        CHECK(t.topo_order == std::vector<int>{0, 1, 2});
    }
    SUBCASE("cycle rejected") {
        CHECK_THROWS_AS(make_topology({1, 0}), ValidationError);
    }
    SUBCASE("out-of-range parent rejected") {
        CHECK_THROWS_AS(make_topology({5}), ValidationError);
    }
}

namespace {

const char* kMinimalValley = R"({
  "horizon": 1,
  "dams": [
    {"id": 1, "x_min": 0, "x_max": 10, "u_min": 0, "u_max": 2, "x_target": 0,
     "penalty_a": 0, "epsilon": 0, "control_levels": [0, 1, 2], "x0": 5,
     "parent": null}
  ],
  "noise": [
    {"atoms": [{"p": 1.0, "inflows": [1.0], "prices": [2.0]}]}
  ]
})";

} // namespace

TEST_CASE("parse_valley: minimal fixture round-trips") {
    Valley v = parse_valley(kMinimalValley);
    CHECK(v.topology.n_dams == 1);
    CHECK(v.dams[0].x0 == 5.0);
    CHECK(v.noise.stages[0][0].prices[0] == 2.0);

    std::string text = valley_to_json(v);
    Valley again = parse_valley(text);
    CHECK(again.dams[0].control_levels == v.dams[0].control_levels);
    CHECK(again.noise.stages[0][0].p == 1.0);
}

TEST_CASE("parse_valley: probability sum off by 0.1 is rejected") {
    std::string bad = kMinimalValley;
    auto pos = bad.find("\"p\": 1.0");
    bad.replace(pos, 8, "\"p\": 0.9");
    CHECK_THROWS_AS(parse_valley(bad), ValidationError);
}

TEST_CASE("parse_valley: NaN and Inf rejected") {
    std::string bad = kMinimalValley;
    auto pos = bad.find("\"x0\": 5");
    bad.replace(pos, 7, "\"x0\": 1e999");
    CHECK_THROWS(parse_valley(bad));
}

TEST_CASE("parse_valley: 4-dam chain geometry by parent ids") {
    std::string text = R"({"horizon": 1, "dams": [)";
    for (int i = 1; i <= 4; ++i) {
        text += R"({"id": )" + std::to_string(i) +
                R"(, "x_min": 0, "x_max": 10, "u_min": 0, "u_max": 1,
                   "x_target": 0, "penalty_a": 0, "epsilon": 0,
                   "control_levels": [0, 1], "x0": 5, "parent": )" +
                (i < 4 ? std::to_string(i + 1) : "null") + "}";
        if (i < 4) text += ",";
    }
    text += R"(], "noise": [{"atoms": [{"p": 1.0,
              "inflows": [0,0,0,0], "prices": [1,1,1,1]}]}]})";
    Valley v = parse_valley(text);
    CHECK(v.topology.parent == std::vector<int>{1, 2, 3, -1});
    CHECK(v.topology.topo_order == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("parse_valley: marginal stages need the explicit flag") {
    std::string text = R"({
      "horizon": 1,
      "dams": [
        {"id": 1, "x_min": 0, "x_max": 10, "u_min": 0, "u_max": 1, "x_target": 0,
         "penalty_a": 0, "epsilon": 0, "control_levels": [0, 1], "x0": 5,
         "parent": 2},
        {"id": 2, "x_min": 0, "x_max": 10, "u_min": 0, "u_max": 1, "x_target": 0,
         "penalty_a": 0, "epsilon": 0, "control_levels": [0, 1], "x0": 5,
         "parent": null}
      ],
      "noise": [
        {"marginals": [
           [{"p": 0.5, "inflow": 0, "price": 1},
            {"p": 0.5, "inflow": 2, "price": 1}],
           [{"p": 1.0, "inflow": 1, "price": 3}]
        ]}
      ]
    })";
    CHECK_THROWS_AS(parse_valley(text), ValidationError);
    LoadOptions opts;
    opts.expand_marginals = true;
    Valley v = parse_valley(text, opts);
    REQUIRE(v.noise.stages[0].size() == 2);
    CHECK(v.noise.stages[0][0].p == 0.5);
    CHECK(v.noise.stages[0][0].inflows == std::vector<double>{0.0, 1.0});
    CHECK(v.noise.stages[0][1].inflows == std::vector<double>{2.0, 1.0});
    CHECK(v.noise.stages[0][0].prices == std::vector<double>{1.0, 3.0});

    // Product above the cap is refused.
    opts.marginal_product_cap = 1;
    CHECK_THROWS_AS(parse_valley(text, opts), ValidationError);
}

TEST_CASE("load_valley: file round-trip and missing file") {
    Valley v = parse_valley(kMinimalValley);
    std::string path = "model_roundtrip_tmp.json";
    save_valley(v, path);
    Valley back = load_valley(path);
    CHECK(back.dams[0].x_max == 10.0);
    std::remove(path.c_str());
    CHECK_THROWS(load_valley("does_not_exist_anywhere.json"));
}

TEST_CASE("sample_scenario: determinism and degenerate noise") {
    Valley v = oracles::single_dam(10, 5, {0, 1}, 3, {1, 1, 1}, {1, 1, 1});
    auto s1 = sample_scenario(v.noise, 42);
    auto s2 = sample_scenario(v.noise, 42);
    CHECK(s1 == s2);
    REQUIRE(s1.size() == 3);
    CHECK(s1[0].first == std::vector<double>{1.0}); // single atom: forced
}

TEST_CASE("sample_scenario: empirical frequency within the exact binomial CI") {
    // Two equiprobable atoms; 1e5 single-stage draws.
    Valley v = oracles::single_dam(10, 5, {0, 1}, 1, {0}, {1});
    NoiseAtom second = v.noise.stages[0][0];
    v.noise.stages[0][0].p = 0.5;
    second.p = 0.5;
    second.inflows = {2.0};
    v.noise.stages[0].push_back(second);

    const long n = 100000;
    long count0 = 0;
    for (long s = 0; s < n; ++s)
        if (sample_scenario_indices(v.noise, static_cast<std::uint64_t>(s))[0] == 0)
            ++count0;
    oracles::BinomCi ci = oracles::binom_ci(n, 0.5, 1e-3);
    CHECK(count0 >= ci.lo);
    CHECK(count0 <= ci.hi);
    // The CI at this n is tighter than +/-0.005, so this also holds:
    CHECK(count0 / static_cast<double>(n) >= 0.495);
    CHECK(count0 / static_cast<double>(n) <= 0.505);
}

TEST_CASE("pick_atom: cumulative walk boundaries") {
    std::vector<NoiseAtom> atoms(2);
    atoms[0].p = 0.25;
    atoms[1].p = 0.75;
    CHECK(pick_atom(atoms, 0.0) == 0);
    CHECK(pick_atom(atoms, 0.2499) == 0);
    CHECK(pick_atom(atoms, 0.25) == 1);
    CHECK(pick_atom(atoms, 0.999999) == 1);
}

TEST_CASE("validate_valley: collects multiple violations at once") {
    Valley v = oracles::single_dam(10, 5, {0, 1}, 1, {1}, {1});
    v.dams[0].x0 = 99;                 // outside [x_min, x_max]
    v.dams[0].control_levels = {1, 1}; // not strictly increasing
    auto issues = validate_valley(v);
    CHECK(issues.size() >= 2);
}
