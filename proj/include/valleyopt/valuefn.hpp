#pragma once

#include <string>
#include <variant>
#include <vector>

#include "valleyopt/errors.hpp"

namespace valleyopt {

// Evenly spaced, endpoints exact.
std::vector<double> make_knots(double lo, double hi, int count);

// Dense multilinear-interpolation table over a product of knot vectors.
// Values are row-major with the last dimension fastest.
struct Grid {
    std::vector<std::vector<double>> knots;
    std::vector<double> values;

    std::size_t n_nodes() const;
    std::size_t flat_index(const std::vector<int>& multi) const;
    void node_coords(std::size_t flat, std::vector<double>& out) const;
    // Queries clamp to the box within tolerance 1e-9 per axis; farther out throws.
    double eval(const double* x) const;
};

struct Cut {
    double intercept = 0.0;
    std::vector<double> gradient;
};

// Max-of-affine lower model of a cost-to-go; FIFO eviction beyond capacity.
struct CutPool {
    int capacity = 100;
    double empty_floor = 0.0; // eval of an empty pool
    std::vector<Cut> cuts;    // front = oldest

    void add_cut(double intercept, std::vector<double> gradient);
    double eval(const double* x) const;
};

struct ValueFunction {
    int t = 0;
    int dim = 0;
    std::variant<Grid, CutPool> repr;

    double eval(const double* x) const;
    double eval(const std::vector<double>& x) const { return eval(x.data()); }
};

// A solver's full output: per-stage value functions for t = 0..T-1. The
// terminal value is always evaluated exactly from the valley's final costs,
// so it is not stored. kind is one of dp-grid | sddp-cuts | dadp-sum;
// dadp-sum keeps per-dam 1-D functions in per_dam[i][t] instead of stages.
struct ValueSet {
    std::string kind;
    int horizon = 0;
    int n_dams = 0;
    std::vector<ValueFunction> stages;
    std::vector<std::vector<ValueFunction>> per_dam;
};

void save_value_set(const ValueSet& vs, const std::string& path);
ValueSet load_value_set(const std::string& path);

} // namespace valleyopt
