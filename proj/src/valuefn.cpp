#include "valleyopt/valuefn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace valleyopt {

using nlohmann::json;

namespace {
constexpr double kBoxTol = 1e-9;
constexpr int kMaxDims = 16;
} // namespace

std::vector<double> make_knots(double lo, double hi, int count) {
    if (count < 2) throw ValidationError("a knot vector needs at least 2 knots");
    if (!(lo < hi)) throw ValidationError("knot interval must have positive width");
    std::vector<double> k(count);
    double step = (hi - lo) / (count - 1);
    for (int i = 0; i < count; ++i) k[i] = lo + i * step;
    k.back() = hi;
    return k;
}

std::size_t Grid::n_nodes() const {
    std::size_t n = 1;
    for (const auto& k : knots) n *= k.size();
    return n;
}

std::size_t Grid::flat_index(const std::vector<int>& multi) const {
    std::size_t idx = 0;
    for (std::size_t d = 0; d < knots.size(); ++d) idx = idx * knots[d].size() + multi[d];
    return idx;
}

void Grid::node_coords(std::size_t flat, std::vector<double>& out) const {
    out.resize(knots.size());
    for (std::size_t d = knots.size(); d-- > 0;) {
        std::size_t k = knots[d].size();
        out[d] = knots[d][flat % k];
        flat /= k;
    }
}

double Grid::eval(const double* x) const {
    int dims = static_cast<int>(knots.size());
    if (dims > kMaxDims) throw ValidationError("grid dimension exceeds supported maximum");
    int lo[kMaxDims];
    double w[kMaxDims];
    for (int d = 0; d < dims; ++d) {
        const auto& k = knots[d];
        double xd = x[d];
        if (xd < k.front()) {
            if (k.front() - xd > kBoxTol)
                throw ValidationError("state below value-function box in dimension " +
                                      std::to_string(d));
            xd = k.front();
        } else if (xd > k.back()) {
            if (xd - k.back() > kBoxTol)
                throw ValidationError("state above value-function box in dimension " +
                                      std::to_string(d));
            xd = k.back();
        }
        auto it = std::upper_bound(k.begin(), k.end(), xd);
        int j = static_cast<int>(it - k.begin()) - 1;
        if (j < 0) j = 0;
        if (j > static_cast<int>(k.size()) - 2) j = static_cast<int>(k.size()) - 2;
        lo[d] = j;
        w[d] = (xd - k[j]) / (k[j + 1] - k[j]);
    }
    double acc = 0.0;
    int corners = 1 << dims;
    for (int c = 0; c < corners; ++c) {
        double weight = 1.0;
        std::size_t idx = 0;
        for (int d = 0; d < dims; ++d) {
            int hi_bit = (c >> d) & 1;
            weight *= hi_bit ? w[d] : 1.0 - w[d];
            idx = idx * knots[d].size() + (lo[d] + hi_bit);
        }
        acc += weight * values[idx];
    }
    return acc;
}

void CutPool::add_cut(double intercept, std::vector<double> gradient) {
    if (!std::isfinite(intercept))
        throw ValidationError("cut intercept is not finite");
    for (double g : gradient)
        if (!std::isfinite(g)) throw ValidationError("cut gradient is not finite");
    cuts.push_back(Cut{intercept, std::move(gradient)});
    if (static_cast<int>(cuts.size()) > capacity) cuts.erase(cuts.begin());
}

double CutPool::eval(const double* x) const {
    if (cuts.empty()) return empty_floor;
    double best = -std::numeric_limits<double>::infinity();
    for (const Cut& c : cuts) {
        double v = c.intercept;
        for (std::size_t d = 0; d < c.gradient.size(); ++d) v += c.gradient[d] * x[d];
        if (v > best) best = v;
    }
    return best;
}

double ValueFunction::eval(const double* x) const {
    if (std::holds_alternative<Grid>(repr)) return std::get<Grid>(repr).eval(x);
    return std::get<CutPool>(repr).eval(x);
}

namespace {

json grid_to_json(const Grid& g) {
    return json{{"knots", g.knots}, {"values", g.values}};
}

Grid grid_from_json(const json& j) {
    Grid g;
    g.knots = j.at("knots").get<std::vector<std::vector<double>>>();
    g.values = j.at("values").get<std::vector<double>>();
    if (g.values.size() != g.n_nodes())
        throw ValidationError("grid value array length disagrees with knot product");
    return g;
}

json pool_to_json(const CutPool& p) {
    json cuts = json::array();
    for (const Cut& c : p.cuts)
        cuts.push_back(json{{"b", c.intercept}, {"g", c.gradient}});
    return json{{"capacity", p.capacity}, {"floor", p.empty_floor}, {"cuts", cuts}};
}

CutPool pool_from_json(const json& j) {
    CutPool p;
    p.capacity = j.at("capacity").get<int>();
    p.empty_floor = j.at("floor").get<double>();
    for (const json& cj : j.at("cuts")) {
        Cut c;
        c.intercept = cj.at("b").get<double>();
        c.gradient = cj.at("g").get<std::vector<double>>();
        p.cuts.push_back(std::move(c));
    }
    return p;
}

json vf_to_json(const ValueFunction& vf) {
    json j;
    j["t"] = vf.t;
    j["dim"] = vf.dim;
    if (std::holds_alternative<Grid>(vf.repr))
        j["grid"] = grid_to_json(std::get<Grid>(vf.repr));
    else
        j["cuts"] = pool_to_json(std::get<CutPool>(vf.repr));
    return j;
}

ValueFunction vf_from_json(const json& j) {
    ValueFunction vf;
    vf.t = j.at("t").get<int>();
    vf.dim = j.at("dim").get<int>();
    if (j.contains("grid"))
        vf.repr = grid_from_json(j["grid"]);
    else
        vf.repr = pool_from_json(j.at("cuts"));
    return vf;
}

} // namespace

void save_value_set(const ValueSet& vs, const std::string& path) {
    json j;
    j["kind"] = vs.kind;
    j["horizon"] = vs.horizon;
    j["n_dams"] = vs.n_dams;
    if (vs.kind == "dadp-sum") {
        json dams = json::array();
        for (const auto& dam_vfs : vs.per_dam) {
            json stages = json::array();
            for (const auto& vf : dam_vfs) stages.push_back(vf_to_json(vf));
            dams.push_back(json{{"stages", std::move(stages)}});
        }
        j["dams"] = std::move(dams);
    } else {
        json stages = json::array();
        for (const auto& vf : vs.stages) stages.push_back(vf_to_json(vf));
        j["stages"] = std::move(stages);
    }
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write value-function file: " + path);
    out << j.dump() << '\n';
}

ValueSet load_value_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open value-function file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    json j;
    try {
        j = json::parse(buf.str());
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": not valid JSON: " + e.what());
    }
    try {
        ValueSet vs;
        vs.kind = j.at("kind").get<std::string>();
        vs.horizon = j.at("horizon").get<int>();
        vs.n_dams = j.at("n_dams").get<int>();
        if (vs.kind == "dadp-sum") {
            for (const json& dj : j.at("dams")) {
                std::vector<ValueFunction> dam_vfs;
                for (const json& sj : dj.at("stages")) dam_vfs.push_back(vf_from_json(sj));
                vs.per_dam.push_back(std::move(dam_vfs));
            }
        } else {
            for (const json& sj : j.at("stages")) vs.stages.push_back(vf_from_json(sj));
        }
        return vs;
    } catch (const json::exception& e) {
        throw ValidationError(path + ": malformed value-function file: " + e.what());
    }
}

} // namespace valleyopt
