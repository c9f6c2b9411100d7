#include "valleyopt/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "valleyopt/onestep.hpp"
#include "valleyopt/parallel.hpp"
#include "valleyopt/rng.hpp"

namespace valleyopt {

double GlobalValue::eval(int t, const double* x) const {
    int T = valley->noise.horizon;
    if (t == T) return terminal_cost(*valley, x);
    if (values->kind == "dadp-sum") {
        double s = 0.0;
        for (std::size_t i = 0; i < values->per_dam.size(); ++i)
            s += values->per_dam[i][t].eval(&x[i]);
        return s;
    }
    return values->stages[t].eval(x);
}

GlobalValue make_global_value(const Valley& v, const ValueSet& vs) {
    if (vs.horizon != v.noise.horizon)
        throw ValidationError("value functions solved for a different horizon");
    if (vs.n_dams != v.topology.n_dams)
        throw ValidationError("value functions solved for a different dam count");
    if (vs.kind == "dadp-sum") {
        if (static_cast<int>(vs.per_dam.size()) != v.topology.n_dams)
            throw ValidationError("dadp value set is missing per-dam functions");
        for (const auto& dam_vfs : vs.per_dam)
            if (static_cast<int>(dam_vfs.size()) != v.noise.horizon)
                throw ValidationError("dadp value set is missing stage functions");
    } else if (vs.kind == "dp-grid" || vs.kind == "sddp-cuts") {
        if (static_cast<int>(vs.stages.size()) != v.noise.horizon)
            throw ValidationError("value set is missing stage functions");
    } else {
        throw ValidationError("unknown value-function kind: " + vs.kind);
    }
    GlobalValue gv;
    gv.valley = &v;
    gv.values = &vs;
    return gv;
}

namespace {

// Cascade an explicit control assignment; nullopt when any dam's control is
// infeasible under the water it actually receives.
std::optional<double> eval_assignment(const Valley& v, const GlobalValue& gv, int t,
                                      const std::vector<double>& x, const NoiseAtom& w,
                                      const std::vector<int>& level_idx,
                                      std::vector<StageTransition>& tr,
                                      std::vector<double>& xn) {
    int n = v.topology.n_dams;
    double cost = 0.0;
    for (int k = 0; k < n; ++k) {
        int i = v.topology.topo_order[k];
        const Dam& d = v.dams[i];
        double z = 0.0;
        for (int c : v.topology.children[i]) z += tr[c].outflow;
        double u = d.control_levels[level_idx[i]];
        if (!control_feasible(d, x[i], u, w.inflows[i], z)) return std::nullopt;
        tr[i] = dam_step_unchecked(d, x[i], u, w.inflows[i], z);
        tr[i].stage_cost = stage_cost(d, u, w.prices[i]);
        cost += tr[i].stage_cost;
        xn[i] = tr[i].x_next;
    }
    return cost + gv.eval(t + 1, xn.data());
}

PolicyDecision coordinate_descent(const Valley& v, const GlobalValue& gv, int t,
                                  const std::vector<double>& x, const NoiseAtom& w,
                                  const PolicyConfig& cfg) {
    int n = v.topology.n_dams;
    std::vector<int> idx(n, 0);
    std::vector<StageTransition> tr(n), best_tr(n);
    std::vector<double> xn(n);
    auto cur = eval_assignment(v, gv, t, x, w, idx, tr, xn);
    if (!cur)
        throw ValidationError("no feasible control assignment at the smallest levels");
    best_tr = tr;
    double best = *cur;
    for (int sweep = 0; sweep < cfg.coord_sweeps; ++sweep) {
        bool changed = false;
        for (int k = 0; k < n; ++k) {
            int i = v.topology.topo_order[k];
            int keep = idx[i];
            int best_li = keep;
            for (int li = 0; li < static_cast<int>(v.dams[i].control_levels.size());
                 ++li) {
                if (li == keep) continue;
                idx[i] = li;
                auto cand = eval_assignment(v, gv, t, x, w, idx, tr, xn);
                if (cand && *cand < best) {
                    best = *cand;
                    best_li = li;
                    best_tr = tr;
                }
            }
            idx[i] = best_li;
            if (best_li != keep) changed = true;
        }
        if (!changed) break;
    }
    // Recompute at the final assignment so transitions match idx exactly.
    auto fin = eval_assignment(v, gv, t, x, w, idx, tr, xn);
    PolicyDecision dec;
    dec.value = fin ? *fin : best;
    dec.transitions = fin ? tr : best_tr;
    dec.controls.resize(n);
    for (int i = 0; i < n; ++i) dec.controls[i] = v.dams[i].control_levels[idx[i]];
    dec.used_fallback = true;
    return dec;
}

} // namespace

PolicyDecision one_step_policy(const Valley& v, const GlobalValue& gv, int t,
                               const std::vector<double>& x, const NoiseAtom& w,
                               const PolicyConfig& cfg) {
    if (control_combination_bound(v) > cfg.enumeration_budget)
        return coordinate_descent(v, gv, t, x, w, cfg);
    OneStepWorkspace ws;
    PolicyDecision dec;
    dec.value = one_step_min(
        v, w, [&](const double* xn) { return gv.eval(t + 1, xn); }, ws, x.data());
    dec.controls = ws.best_u;
    dec.transitions = ws.best_tr;
    return dec;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    double rank = q * static_cast<double>(sorted.size() - 1);
    std::size_t i = static_cast<std::size_t>(std::floor(rank + 0.5));
    if (i >= sorted.size()) i = sorted.size() - 1;
    return sorted[i];
}

// Independent replay of one stage's decisions through the checked transition
// kernel; any disagreement counts as a violation.
long replay_violations(const Valley& v, const std::vector<double>& x,
                       const NoiseAtom& w, const PolicyDecision& dec) {
    long bad = 0;
    int n = v.topology.n_dams;
    for (int k = 0; k < n; ++k) {
        int i = v.topology.topo_order[k];
        const Dam& d = v.dams[i];
        double z = 0.0;
        for (int c : v.topology.children[i]) z += dec.transitions[c].outflow;
        try {
            StageTransition tr = dam_step(d, x[i], dec.controls[i], w.inflows[i], z);
            const StageTransition& got = dec.transitions[i];
            if (tr.x_next != got.x_next || tr.spill != got.spill ||
                tr.outflow != got.outflow)
                ++bad;
            if (!(tr.x_next >= d.x_min && tr.x_next <= d.x_max)) ++bad;
        } catch (const std::exception&) {
            ++bad;
        }
    }
    return bad;
}

} // namespace

SimReport simulate(const Valley& v, const GlobalValue& gv, int n_scenarios,
                   std::uint64_t seed, const PolicyConfig& cfg) {
    check_valley(v);
    if (n_scenarios < 1) throw ValidationError("simulation needs at least one scenario");
    int n = v.topology.n_dams;
    int T = v.noise.horizon;
    WallTimer timer;

    SimReport rep;
    rep.n_scenarios = n_scenarios;
    rep.payoffs.assign(n_scenarios, 0.0);
    // traj[(dam*(T+1) + t)*n_scenarios + s]
    std::vector<double> traj(static_cast<std::size_t>(n) * (T + 1) * n_scenarios, 0.0);
    std::vector<long> violations(n_scenarios, 0);
    std::vector<unsigned char> fallback(n_scenarios, 0);

    parallel_for(static_cast<std::size_t>(n_scenarios), cfg.workers, [&](std::size_t s) {
        if (cfg.deadline.expired())
            throw BudgetError("simulation deadline exceeded");
        auto idx = sample_scenario_indices(v.noise, mix_seed(seed, s));
        std::vector<double> x(n);
        for (int i = 0; i < n; ++i) x[i] = v.dams[i].x0;
        double cost = 0.0;
        long bad = 0;
        for (int i = 0; i < n; ++i)
            traj[(static_cast<std::size_t>(i) * (T + 1) + 0) * n_scenarios + s] = x[i];
        for (int t = 0; t < T; ++t) {
            const NoiseAtom& w = v.noise.stages[t][idx[t]];
            PolicyDecision dec = one_step_policy(v, gv, t, x, w, cfg);
            if (dec.used_fallback) fallback[s] = 1;
            bad += replay_violations(v, x, w, dec);
            for (int i = 0; i < n; ++i) {
                cost += dec.transitions[i].stage_cost;
                x[i] = dec.transitions[i].x_next;
                traj[(static_cast<std::size_t>(i) * (T + 1) + t + 1) * n_scenarios + s] =
                    x[i];
            }
        }
        cost += terminal_cost(v, x.data());
        rep.payoffs[s] = -cost;
        violations[s] = bad;
    });

    for (long b : violations) rep.violation_count += b;
    for (unsigned char f : fallback)
        if (f) rep.used_fallback = true;
    double sum = 0.0;
    for (double p : rep.payoffs) sum += p;
    rep.mean_payoff = sum / n_scenarios;
    if (n_scenarios > 1) {
        double ss = 0.0;
        for (double p : rep.payoffs) ss += (p - rep.mean_payoff) * (p - rep.mean_payoff);
        rep.std_error = std::sqrt(ss / (n_scenarios - 1)) / std::sqrt(double(n_scenarios));
    }

    rep.traj_quantiles.assign(n, std::vector<std::array<double, 5>>(T + 1));
    std::vector<double> cell(n_scenarios);
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t <= T; ++t) {
            for (int s = 0; s < n_scenarios; ++s)
                cell[s] = traj[(static_cast<std::size_t>(i) * (T + 1) + t) * n_scenarios + s];
            std::sort(cell.begin(), cell.end());
            rep.traj_quantiles[i][t] = {cell.front(), quantile_sorted(cell, 0.25),
                                        quantile_sorted(cell, 0.5),
                                        quantile_sorted(cell, 0.75), cell.back()};
        }
    }
    rep.seconds = timer.seconds();
    return rep;
}

void write_report_csv(const MethodReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write report file: " + path);
    out << "method,n_scenarios,achieved_payoff,achieved_payoff_se,payoff_upper_bound,"
           "seconds,fallback\n";
    out << r.method << ',' << r.n_scenarios << ',' << fmt_double(r.mean_payoff) << ','
        << fmt_double(r.std_error) << ','
        << (r.payoff_bound ? fmt_double(*r.payoff_bound) : std::string("N.A.")) << ','
        << fmt_double(r.seconds) << ',' << (r.used_fallback ? 1 : 0) << '\n';
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

MethodReport read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open report file: " + path);
    std::string header, row;
    if (!std::getline(in, header) || !std::getline(in, row))
        throw ValidationError(path + ": report file needs a header and one data row");
    auto cols = split_csv_line(header);
    auto vals = split_csv_line(row);
    if (cols.size() != vals.size())
        throw ValidationError(path + ": header and row column counts differ");
    MethodReport r;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        const std::string& c = cols[i];
        const std::string& x = vals[i];
        try {
            if (c == "method")
                r.method = x;
            else if (c == "n_scenarios")
                r.n_scenarios = std::stoi(x);
            else if (c == "achieved_payoff")
                r.mean_payoff = std::stod(x);
            else if (c == "achieved_payoff_se")
                r.std_error = std::stod(x);
            else if (c == "payoff_upper_bound" && x != "N.A." && !x.empty())
                r.payoff_bound = std::stod(x);
            else if (c == "seconds")
                r.seconds = std::stod(x);
            else if (c == "fallback")
                r.used_fallback = x == "1";
        } catch (const std::exception&) {
            throw ValidationError(path + ": bad value '" + x + "' in column " + c);
        }
    }
    if (r.method.empty())
        throw ValidationError(path + ": report is missing the method column");
    return r;
}

std::string compare_table(const std::vector<MethodReport>& reports,
                          const std::string& format) {
    if (reports.empty()) throw ValidationError("compare needs at least one report");
    double ref = reports.front().mean_payoff;
    auto gap = [&](double val) -> std::string {
        if (ref == 0.0) return "N.A.";
        return fmt_fixed(100.0 * (val - ref) / ref, 1) + "%";
    };
    std::ostringstream out;
    if (format == "csv") {
        out << "method,n_scenarios,achieved_payoff,achieved_payoff_se,"
               "payoff_upper_bound,gap_vs_first,seconds\n";
        for (const auto& r : reports) {
            out << r.method << ',' << r.n_scenarios << ',' << fmt_double(r.mean_payoff)
                << ',' << fmt_double(r.std_error) << ','
                << (r.payoff_bound ? fmt_double(*r.payoff_bound) : std::string("N.A."))
                << ',' << gap(r.mean_payoff) << ',' << fmt_double(r.seconds) << '\n';
        }
    } else if (format == "md") {
        out << "| method | achieved payoff | payoff upper bound | gap vs first | "
               "seconds |\n";
        out << "|---|---|---|---|---|\n";
        for (const auto& r : reports) {
            out << "| " << r.method << " | " << fmt_double(r.mean_payoff) << " ± "
                << fmt_double(r.std_error) << " | "
                << (r.payoff_bound ? fmt_double(*r.payoff_bound) : std::string("N.A."))
                << " | " << gap(r.mean_payoff) << " | " << fmt_double(r.seconds)
                << " |\n";
        }
    } else {
        throw ValidationError("unknown table format: " + format);
    }
    return out.str();
}

void write_histogram_csv(const std::vector<double>& payoffs, int bins,
                         const std::string& path) {
    if (bins < 1) throw ValidationError("histogram needs at least one bin");
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write histogram file: " + path);
    double lo = payoffs.front(), hi = payoffs.front();
    for (double p : payoffs) {
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    out << "bin_lo,bin_hi,count\n";
    if (hi == lo) {
        out << fmt_double(lo) << ',' << fmt_double(hi) << ',' << payoffs.size() << '\n';
        return;
    }
    std::vector<long> counts(bins, 0);
    double width = (hi - lo) / bins;
    for (double p : payoffs) {
        int b = static_cast<int>((p - lo) / width);
        if (b >= bins) b = bins - 1;
        if (b < 0) b = 0;
        ++counts[b];
    }
    for (int b = 0; b < bins; ++b)
        out << fmt_double(lo + b * width) << ',' << fmt_double(lo + (b + 1) * width)
            << ',' << counts[b] << '\n';
}

void write_trajectory_csv(const SimReport& rep, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write trajectory file: " + path);
    out << "dam_index,t,min,q25,median,q75,max\n";
    for (std::size_t i = 0; i < rep.traj_quantiles.size(); ++i)
        for (std::size_t t = 0; t < rep.traj_quantiles[i].size(); ++t) {
            const auto& q = rep.traj_quantiles[i][t];
            out << i << ',' << t << ',' << fmt_double(q[0]) << ',' << fmt_double(q[1])
                << ',' << fmt_double(q[2]) << ',' << fmt_double(q[3]) << ','
                << fmt_double(q[4]) << '\n';
        }
}

} // namespace valleyopt
