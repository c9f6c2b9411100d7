#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "valleyopt/rng.hpp"
#include "valleyopt/valuefn.hpp"

using namespace valleyopt;

TEST_CASE("make_knots: exact endpoints, strict increase") {
    auto k = make_knots(0.0, 10.0, 5);
    REQUIRE(k.size() == 5);
    CHECK(k.front() == 0.0);
    CHECK(k.back() == 10.0);
    for (std::size_t i = 1; i < k.size(); ++i) CHECK(k[i] > k[i - 1]);
}

TEST_CASE("Grid: hand-computed interpolation") {
    SUBCASE("1-D two-knot line") {
        Grid g;
        g.knots = {{0.0, 10.0}};
        g.values = {0.0, 10.0};
        double x = 5.0;
        CHECK(g.eval(&x) == doctest::Approx(5.0).epsilon(1e-12));
    }
    SUBCASE("constant field") {
        Grid g;
        g.knots = {{0.0, 1.0}, {0.0, 1.0}};
        g.values = {7.0, 7.0, 7.0, 7.0};
        double x[2] = {0.3, 0.64};
        CHECK(g.eval(x) == 7.0);
    }
}

TEST_CASE("Grid: knot queries return stored values exactly") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        Grid g;
        int dims = 1 + static_cast<int>(rng.next_u64() % 3);
        std::size_t total = 1;
        for (int d = 0; d < dims; ++d) {
            int n = 2 + static_cast<int>(rng.next_u64() % 3);
            std::vector<double> ks;
            double v = 10.0 * rng.next_double() - 5.0;
            for (int j = 0; j < n; ++j) {
                ks.push_back(v);
                v += 0.25 + 2.0 * rng.next_double();
            }
            g.knots.push_back(ks);
            total *= n;
        }
        for (std::size_t i = 0; i < total; ++i)
            g.values.push_back(100.0 * rng.next_double() - 50.0);

        std::vector<double> x(dims);
        for (std::size_t flat = 0; flat < total; ++flat) {
            g.node_coords(flat, x);
            CHECK(g.eval(x.data()) == g.values[flat]); // bitwise
        }
    }
}

TEST_CASE("Grid: monotone values give monotone interpolation along axes") {
    Grid g;
    g.knots = {{0.0, 1.0, 3.0}, {0.0, 2.0}};
    // Decreasing in both coordinates.
    g.values = {9, 8, 7, 6, 5, 4};
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        double x0 = 3.0 * rng.next_double();
        double x1 = 2.0 * rng.next_double();
        double d0 = (3.0 - x0) * rng.next_double();
        double a[2] = {x0, x1};
        double b[2] = {x0 + d0, x1};
        CHECK(g.eval(a) >= g.eval(b) - 1e-12);
    }
}

TEST_CASE("Grid: clamp within tolerance, throw beyond") {
    Grid g;
    g.knots = {{0.0, 1.0}};
    g.values = {2.0, 4.0};
    double x = -0.5e-9; // inside the 1e-9 clamp band
    CHECK(g.eval(&x) == 2.0);
    x = -1.0;
    CHECK_THROWS_AS(g.eval(&x), ValidationError);
}

TEST_CASE("CutPool: hand-computed max and FIFO retention") {
    SUBCASE("max of two affine forms") {
        CutPool pool;
        pool.add_cut(0.0, {0.0});
        pool.add_cut(-5.0, {1.0});
        double x = 10.0;
        CHECK(pool.eval(&x) == 5.0);
    }
    SUBCASE("empty pool evaluates to its floor") {
        CutPool pool;
        pool.empty_floor = 0.0;
        double x = 3.0;
        CHECK(pool.eval(&x) == 0.0);
    }
    SUBCASE("101st cut evicts the first") {
        CutPool pool;
        pool.capacity = 100;
        for (int i = 0; i < 100; ++i) pool.add_cut(static_cast<double>(i), {0.0});
        REQUIRE(pool.cuts.size() == 100);
        CHECK(pool.cuts.front().intercept == 0.0);
        pool.add_cut(1000.0, {0.0});
        CHECK(pool.cuts.size() == 100);
        CHECK(pool.cuts.front().intercept == 1.0); // oldest gone
        CHECK(pool.cuts.back().intercept == 1000.0);
    }
    SUBCASE("duplicates are kept (no dedup)") {
        CutPool pool;
        pool.add_cut(1.0, {2.0});
        pool.add_cut(1.0, {2.0});
        CHECK(pool.cuts.size() == 2);
    }
    SUBCASE("non-finite cut rejected") {
        CutPool pool;
        CHECK_THROWS_AS(pool.add_cut(std::nan(""), {0.0}), ValidationError);
    }
}

TEST_CASE("CutPool: convexity by midpoint sampling; add_cut never lowers eval") {
    Rng rng(17);
    CutPool pool;
    for (int i = 0; i < 30; ++i)
        pool.add_cut(4.0 * rng.next_double() - 2.0,
                     {2.0 * rng.next_double() - 1.0, 2.0 * rng.next_double() - 1.0});
    for (int trial = 0; trial < 100; ++trial) {
        double a[2] = {10 * rng.next_double() - 5, 10 * rng.next_double() - 5};
        double b[2] = {10 * rng.next_double() - 5, 10 * rng.next_double() - 5};
        double m[2] = {(a[0] + b[0]) / 2, (a[1] + b[1]) / 2};
        CHECK(pool.eval(m) <= (pool.eval(a) + pool.eval(b)) / 2 + 1e-12);
    }
    double probe[2] = {1.0, -2.0};
    double before = pool.eval(probe);
    pool.add_cut(0.5, {0.1, 0.1}); // below capacity: existing cuts all kept
    CHECK(pool.eval(probe) >= before);
}

TEST_CASE("ValueSet: JSON round-trip for grids and cut pools") {
    ValueSet vs;
    vs.kind = "sddp-cuts";
    vs.horizon = 2;
    vs.n_dams = 2;
    for (int t = 0; t < 2; ++t) {
        ValueFunction vf;
        vf.t = t;
        vf.dim = 2;
        CutPool pool;
        pool.capacity = 5;
        pool.add_cut(1.5, {0.25, -0.75});
        vf.repr = pool;
        vs.stages.push_back(std::move(vf));
    }
    std::string path = "valuefn_roundtrip_tmp.json";
    save_value_set(vs, path);
    ValueSet back = load_value_set(path);
    std::remove(path.c_str());
    CHECK(back.kind == "sddp-cuts");
    REQUIRE(back.stages.size() == 2);
    const CutPool& pool = std::get<CutPool>(back.stages[1].repr);
    REQUIRE(pool.cuts.size() == 1);
    CHECK(pool.cuts[0].intercept == 1.5);
    CHECK(pool.cuts[0].gradient == std::vector<double>{0.25, -0.75});

    ValueSet gs;
    gs.kind = "dadp-sum";
    gs.horizon = 1;
    gs.n_dams = 1;
    ValueFunction vf;
    vf.t = 0;
    vf.dim = 1;
    Grid g;
    g.knots = {{0.0, 0.5, 1.0}};
    g.values = {3.0, 2.0, 1.0};
    vf.repr = g;
    gs.per_dam.push_back({std::move(vf)});
    save_value_set(gs, path);
    ValueSet gback = load_value_set(path);
    std::remove(path.c_str());
    REQUIRE(gback.per_dam.size() == 1);
    const Grid& gg = std::get<Grid>(gback.per_dam[0][0].repr);
    CHECK(gg.values == std::vector<double>{3.0, 2.0, 1.0}); // bitwise via round-trip text
}
