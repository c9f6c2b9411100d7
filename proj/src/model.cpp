#include "valleyopt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "valleyopt/rng.hpp"
#include <json.hpp>

namespace valleyopt {

using nlohmann::json;

StageTransition dam_step(const Dam& d, double x, double u, double a, double z) {
    bool known = false;
    for (double lv : d.control_levels) {
        if (lv == u) {
            known = true;
            break;
        }
    }
    if (!known) {
        throw InfeasibleControlError("dam " + std::to_string(d.id) + ": control " +
                                     std::to_string(u) + " is not an admissible level");
    }
    if (!control_feasible(d, x, u, a, z)) {
        throw InfeasibleControlError("dam " + std::to_string(d.id) + ": control " +
                                     std::to_string(u) + " drains volume " +
                                     std::to_string(x) + " below x_min");
    }
    return dam_step_unchecked(d, x, u, a, z);
}

int feasible_control_count(const Dam& d, double x, double a, double z) {
    int n = 0;
    for (double u : d.control_levels) {
        if (!control_feasible(d, x, u, a, z)) break; // bound decreasing in u: prefix
        ++n;
    }
    if (n == 0) {
        throw ValidationError("dam " + std::to_string(d.id) +
                              ": no feasible control at volume " + std::to_string(x) +
                              " (even the smallest level drains below x_min)");
    }
    return n;
}

std::vector<double> control_range(const Dam& d, double x, double a, double z) {
    int n = feasible_control_count(d, x, a, z);
    return std::vector<double>(d.control_levels.begin(), d.control_levels.begin() + n);
}

ValleyTopology make_topology(std::vector<int> parent) {
    ValleyTopology topo;
    topo.n_dams = static_cast<int>(parent.size());
    topo.parent = std::move(parent);
    topo.children.assign(topo.n_dams, {});
    for (int i = 0; i < topo.n_dams; ++i) {
        int p = topo.parent[i];
        if (p == i || p < -1 || p >= topo.n_dams) {
            throw ValidationError("dam index " + std::to_string(i) +
                                  ": parent reference " + std::to_string(p) +
                                  " is out of range");
        }
        if (p >= 0) topo.children[p].push_back(i);
    }
    // Smallest ready index first: a canonical upstream-to-downstream order.
    std::vector<int> placed_count(topo.n_dams, 0);
    std::vector<bool> placed(topo.n_dams, false);
    topo.topo_order.reserve(topo.n_dams);
    for (int step = 0; step < topo.n_dams; ++step) {
        int pick = -1;
        for (int i = 0; i < topo.n_dams; ++i) {
            if (!placed[i] &&
                placed_count[i] == static_cast<int>(topo.children[i].size())) {
                pick = i;
                break;
            }
        }
        if (pick < 0) throw ValidationError("dam graph contains a cycle");
        placed[pick] = true;
        topo.topo_order.push_back(pick);
        if (topo.parent[pick] >= 0) ++placed_count[topo.parent[pick]];
    }
    return topo;
}

namespace {

bool finite(double v) { return std::isfinite(v); }

void check_finite(double v, const std::string& what, std::vector<std::string>& errs) {
    if (!finite(v)) errs.push_back(what + " is not finite");
}

} // namespace

std::vector<std::string> validate_valley(const Valley& v) {
    std::vector<std::string> errs;
    int n = static_cast<int>(v.dams.size());
    if (n < 1) errs.push_back("valley has no dams");
    if (v.topology.n_dams != n)
        errs.push_back("topology dam count disagrees with dam list length");
    if (static_cast<int>(v.topology.parent.size()) != n)
        errs.push_back("topology parent array length disagrees with dam list length");

    for (int i = 0; i < n; ++i) {
        const Dam& d = v.dams[i];
        std::string at = "dam " + std::to_string(d.id);
        check_finite(d.x_min, at + " x_min", errs);
        check_finite(d.x_max, at + " x_max", errs);
        check_finite(d.u_min, at + " u_min", errs);
        check_finite(d.u_max, at + " u_max", errs);
        check_finite(d.x_target, at + " x_target", errs);
        check_finite(d.penalty_a, at + " penalty_a", errs);
        check_finite(d.epsilon, at + " epsilon", errs);
        check_finite(d.x0, at + " x0", errs);
        if (!(d.x_min < d.x_max))
            errs.push_back(at + ": x_min must be strictly below x_max");
        if (!(d.x_min <= d.x0 && d.x0 <= d.x_max))
            errs.push_back(at + ": x0 outside [x_min, x_max]");
        if (!(d.u_min <= d.u_max)) errs.push_back(at + ": u_min above u_max");
        if (d.u_min < 0.0) errs.push_back(at + ": negative turbine flows not supported");
        if (d.penalty_a < 0.0) errs.push_back(at + ": penalty_a must be >= 0");
        if (d.epsilon < 0.0) errs.push_back(at + ": epsilon must be >= 0");
        if (d.control_levels.empty()) {
            errs.push_back(at + ": control_levels is empty");
        } else {
            for (std::size_t k = 0; k < d.control_levels.size(); ++k) {
                double lv = d.control_levels[k];
                if (!finite(lv)) {
                    errs.push_back(at + ": control level " + std::to_string(k) +
                                   " is not finite");
                    continue;
                }
                if (lv < d.u_min || lv > d.u_max)
                    errs.push_back(at + ": control level " + std::to_string(lv) +
                                   " outside [u_min, u_max]");
                if (k > 0 && !(d.control_levels[k - 1] < lv))
                    errs.push_back(at + ": control_levels not strictly increasing at index " +
                                   std::to_string(k));
            }
        }
    }

    if (v.noise.horizon < 1) errs.push_back("horizon must be >= 1");
    if (static_cast<int>(v.noise.stages.size()) != v.noise.horizon)
        errs.push_back("noise stage count disagrees with horizon");
    for (std::size_t t = 0; t < v.noise.stages.size(); ++t) {
        const auto& atoms = v.noise.stages[t];
        std::string at = "noise stage " + std::to_string(t);
        if (atoms.empty()) {
            errs.push_back(at + ": no atoms");
            continue;
        }
        double total = 0.0;
        for (std::size_t k = 0; k < atoms.size(); ++k) {
            const NoiseAtom& atom = atoms[k];
            std::string aat = at + " atom " + std::to_string(k);
            check_finite(atom.p, aat + " probability", errs);
            if (!(atom.p > 0.0)) errs.push_back(aat + ": probability must be > 0");
            total += atom.p;
            if (static_cast<int>(atom.inflows.size()) != n)
                errs.push_back(aat + ": inflow vector has wrong dimension");
            if (static_cast<int>(atom.prices.size()) != n)
                errs.push_back(aat + ": price vector has wrong dimension");
            for (double a : atom.inflows) {
                if (!finite(a))
                    errs.push_back(aat + ": inflow not finite");
                else if (a < 0.0)
                    errs.push_back(aat + ": negative inflow");
            }
            for (double p : atom.prices)
                if (!finite(p)) errs.push_back(aat + ": price not finite");
        }
        if (std::abs(total - 1.0) > 1e-12)
            errs.push_back(at + ": probabilities sum to " + std::to_string(total) +
                           ", not 1");
    }
    return errs;
}

void check_valley(const Valley& v) {
    auto errs = validate_valley(v);
    if (errs.empty()) return;
    std::string msg = "invalid valley:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ValidationError(msg);
}

namespace {

double num_field(const json& j, const char* key, const std::string& ctx,
                 std::vector<std::string>& errs) {
    if (!j.contains(key)) {
        errs.push_back(ctx + ": missing field '" + key + "'");
        return 0.0;
    }
    if (!j[key].is_number()) {
        errs.push_back(ctx + ": field '" + key + "' must be a number");
        return 0.0;
    }
    return j[key].get<double>();
}

std::vector<NoiseAtom> expand_marginals(const json& stage, int t, int n_dams,
                                        const LoadOptions& opts,
                                        std::vector<std::string>& errs) {
    const std::string ctx = "noise stage " + std::to_string(t);
    const json& marg = stage["marginals"];
    if (!marg.is_array() || static_cast<int>(marg.size()) != n_dams) {
        errs.push_back(ctx + ": 'marginals' must be an array with one entry per dam");
        return {};
    }
    // Per-dam atom lists -> joint atoms by independence (odometer order,
    // last dam fastest).
    std::vector<std::vector<NoiseAtom>> per_dam(n_dams);
    std::size_t product = 1;
    for (int i = 0; i < n_dams; ++i) {
        const json& lst = marg[i];
        if (!lst.is_array() || lst.empty()) {
            errs.push_back(ctx + ": marginal list for dam index " + std::to_string(i) +
                           " must be a nonempty array");
            return {};
        }
        for (const json& a : lst) {
            NoiseAtom atom;
            std::string actx = ctx + " dam index " + std::to_string(i);
            atom.p = num_field(a, "p", actx, errs);
            atom.inflows = {num_field(a, "inflow", actx, errs)};
            atom.prices = {num_field(a, "price", actx, errs)};
            per_dam[i].push_back(atom);
        }
        product *= per_dam[i].size();
        if (product > static_cast<std::size_t>(opts.marginal_product_cap)) {
            errs.push_back(ctx + ": marginal product exceeds the cap of " +
                           std::to_string(opts.marginal_product_cap) +
                           " atoms per stage");
            return {};
        }
    }
    std::vector<NoiseAtom> joint;
    joint.reserve(product);
    std::vector<std::size_t> idx(n_dams, 0);
    while (true) {
        NoiseAtom atom;
        atom.p = 1.0;
        atom.inflows.resize(n_dams);
        atom.prices.resize(n_dams);
        for (int i = 0; i < n_dams; ++i) {
            const NoiseAtom& m = per_dam[i][idx[i]];
            atom.p *= m.p;
            atom.inflows[i] = m.inflows[0];
            atom.prices[i] = m.prices[0];
        }
        joint.push_back(std::move(atom));
        int i = n_dams - 1;
        while (i >= 0 && ++idx[i] == per_dam[i].size()) idx[i--] = 0;
        if (i < 0) break;
    }
    return joint;
}

} // namespace

Valley parse_valley(const std::string& json_text, const LoadOptions& opts) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("valley file is not valid JSON: ") + e.what());
    }

    std::vector<std::string> errs;
    Valley v;

    if (!j.is_object()) {
        throw ValidationError("valley file must contain a JSON object");
    }
    if (!j.contains("horizon") || !j["horizon"].is_number_integer())
        errs.push_back("top level: missing integer field 'horizon'");
    else
        v.noise.horizon = j["horizon"].get<int>();

    std::vector<int> parent_ids;
    std::vector<bool> has_parent;
    if (!j.contains("dams") || !j["dams"].is_array() || j["dams"].empty()) {
        errs.push_back("top level: missing nonempty array field 'dams'");
    } else {
        for (const json& dj : j["dams"]) {
            Dam d;
            std::string ctx = "dam entry " + std::to_string(v.dams.size());
            if (dj.contains("id") && dj["id"].is_number_integer())
                d.id = dj["id"].get<int>();
            else
                errs.push_back(ctx + ": missing integer field 'id'");
            ctx = "dam " + std::to_string(d.id);
            d.x_min = num_field(dj, "x_min", ctx, errs);
            d.x_max = num_field(dj, "x_max", ctx, errs);
            d.u_min = num_field(dj, "u_min", ctx, errs);
            d.u_max = num_field(dj, "u_max", ctx, errs);
            d.x_target = num_field(dj, "x_target", ctx, errs);
            d.penalty_a = num_field(dj, "penalty_a", ctx, errs);
            d.epsilon = num_field(dj, "epsilon", ctx, errs);
            d.x0 = num_field(dj, "x0", ctx, errs);
            if (dj.contains("control_levels") && dj["control_levels"].is_array()) {
                for (const json& lv : dj["control_levels"]) {
                    if (lv.is_number())
                        d.control_levels.push_back(lv.get<double>());
                    else
                        errs.push_back(ctx + ": control_levels entries must be numbers");
                }
            } else {
                errs.push_back(ctx + ": missing array field 'control_levels'");
            }
            if (!dj.contains("parent")) {
                errs.push_back(ctx + ": missing field 'parent' (dam id or null)");
                has_parent.push_back(false);
                parent_ids.push_back(0);
            } else if (dj["parent"].is_null()) {
                has_parent.push_back(false);
                parent_ids.push_back(0);
            } else if (dj["parent"].is_number_integer()) {
                has_parent.push_back(true);
                parent_ids.push_back(dj["parent"].get<int>());
            } else {
                errs.push_back(ctx + ": field 'parent' must be a dam id or null");
                has_parent.push_back(false);
                parent_ids.push_back(0);
            }
            v.dams.push_back(std::move(d));
        }
    }

    // Resolve ids -> indices (file order defines the index).
    int n = static_cast<int>(v.dams.size());
    std::vector<int> parent_idx(n, -1);
    for (int i = 0; i < n; ++i) {
        for (int k = i + 1; k < n; ++k) {
            if (v.dams[i].id == v.dams[k].id)
                errs.push_back("duplicate dam id " + std::to_string(v.dams[i].id));
        }
    }
    for (int i = 0; i < n; ++i) {
        if (!has_parent[i]) continue;
        int found = -1;
        for (int k = 0; k < n; ++k) {
            if (v.dams[k].id == parent_ids[i]) {
                found = k;
                break;
            }
        }
        if (found < 0)
            errs.push_back("dam " + std::to_string(v.dams[i].id) +
                           ": parent id " + std::to_string(parent_ids[i]) +
                           " does not exist");
        parent_idx[i] = found;
    }

    if (!j.contains("noise") || !j["noise"].is_array()) {
        errs.push_back("top level: missing array field 'noise'");
    } else {
        int t = 0;
        for (const json& stage : j["noise"]) {
            std::string ctx = "noise stage " + std::to_string(t);
            std::vector<NoiseAtom> atoms;
            if (stage.is_object() && stage.contains("marginals")) {
                if (!opts.expand_marginals) {
                    errs.push_back(ctx + ": per-dam marginals present; enable marginal "
                                         "expansion to materialize the product");
                } else {
                    atoms = expand_marginals(stage, t, n, opts, errs);
                }
            } else if (stage.is_object() && stage.contains("atoms") &&
                       stage["atoms"].is_array()) {
                for (const json& aj : stage["atoms"]) {
                    NoiseAtom atom;
                    std::string actx = ctx + " atom " + std::to_string(atoms.size());
                    atom.p = num_field(aj, "p", actx, errs);
                    if (aj.contains("inflows") && aj["inflows"].is_array()) {
                        for (const json& x : aj["inflows"])
                            atom.inflows.push_back(x.is_number() ? x.get<double>() : 0.0);
                    } else {
                        errs.push_back(actx + ": missing array field 'inflows'");
                    }
                    if (aj.contains("prices") && aj["prices"].is_array()) {
                        for (const json& x : aj["prices"])
                            atom.prices.push_back(x.is_number() ? x.get<double>() : 0.0);
                    } else {
                        errs.push_back(actx + ": missing array field 'prices'");
                    }
                    atoms.push_back(std::move(atom));
                }
            } else {
                errs.push_back(ctx + ": expected an object with 'atoms' or 'marginals'");
            }
            v.noise.stages.push_back(std::move(atoms));
            ++t;
        }
    }

    if (errs.empty()) {
        try {
            v.topology = make_topology(parent_idx);
        } catch (const ValidationError& e) {
            errs.push_back(e.what());
        }
    }
    if (errs.empty()) errs = validate_valley(v);
    if (!errs.empty()) {
        std::string msg = "invalid valley:";
        for (const auto& e : errs) msg += "\n  - " + e;
        throw ValidationError(msg);
    }
    return v;
}

Valley load_valley(const std::string& path, const LoadOptions& opts) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open valley file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_valley(buf.str(), opts);
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

std::string valley_to_json(const Valley& v) {
    json j;
    j["horizon"] = v.noise.horizon;
    json dams = json::array();
    for (int i = 0; i < static_cast<int>(v.dams.size()); ++i) {
        const Dam& d = v.dams[i];
        json dj;
        dj["id"] = d.id;
        dj["x_min"] = d.x_min;
        dj["x_max"] = d.x_max;
        dj["u_min"] = d.u_min;
        dj["u_max"] = d.u_max;
        dj["x_target"] = d.x_target;
        dj["penalty_a"] = d.penalty_a;
        dj["epsilon"] = d.epsilon;
        dj["control_levels"] = d.control_levels;
        dj["x0"] = d.x0;
        int p = v.topology.parent[i];
        if (p < 0)
            dj["parent"] = nullptr;
        else
            dj["parent"] = v.dams[p].id;
        dams.push_back(std::move(dj));
    }
    j["dams"] = std::move(dams);
    json noise = json::array();
    for (const auto& stage : v.noise.stages) {
        json atoms = json::array();
        for (const NoiseAtom& a : stage) {
            json aj;
            aj["p"] = a.p;
            aj["inflows"] = a.inflows;
            aj["prices"] = a.prices;
            atoms.push_back(std::move(aj));
        }
        noise.push_back(json{{"atoms", std::move(atoms)}});
    }
    j["noise"] = std::move(noise);
    return j.dump(2);
}

void save_valley(const Valley& v, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write valley file: " + path);
    out << valley_to_json(v) << '\n';
}

int pick_atom(const std::vector<NoiseAtom>& atoms, double r) {
    double c = 0.0;
    for (std::size_t k = 0; k < atoms.size(); ++k) {
        c += atoms[k].p;
        if (r < c) return static_cast<int>(k);
    }
    return static_cast<int>(atoms.size()) - 1;
}

std::vector<int> sample_scenario_indices(const NoiseProcess& noise, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> idx(noise.horizon);
    for (int t = 0; t < noise.horizon; ++t)
        idx[t] = pick_atom(noise.stages[t], rng.next_double());
    return idx;
}

std::vector<std::pair<std::vector<double>, std::vector<double>>>
sample_scenario(const NoiseProcess& noise, std::uint64_t seed) {
    auto idx = sample_scenario_indices(noise, seed);
    std::vector<std::pair<std::vector<double>, std::vector<double>>> out;
    out.reserve(idx.size());
    for (int t = 0; t < noise.horizon; ++t) {
        const NoiseAtom& a = noise.stages[t][idx[t]];
        out.emplace_back(a.inflows, a.prices);
    }
    return out;
}

} // namespace valleyopt
