#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "valleyopt/dadp.hpp"
#include "valleyopt/dp.hpp"
#include "valleyopt/errors.hpp"
#include "valleyopt/generate.hpp"
#include "valleyopt/model.hpp"
#include "valleyopt/policy.hpp"
#include "valleyopt/sddp.hpp"
#include "valleyopt/util.hpp"
#include "valleyopt/valuefn.hpp"

namespace {

using namespace valleyopt;

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << content;
    if (!out) throw ValidationError("write failed: " + path);
}

// vf.json -> vf.iterations.csv etc.; keeps solver outputs next to each other.
std::string sibling(const std::string& path, const std::string& suffix) {
    std::string stem = path;
    if (stem.size() > 5 && stem.substr(stem.size() - 5) == ".json")
        stem.resize(stem.size() - 5);
    return stem + suffix;
}

std::string method_name(const std::string& kind) {
    if (kind == "dp-grid") return "dp";
    if (kind == "sddp-cuts") return "sddpd";
    if (kind == "dadp-sum") return "dadp";
    return kind;
}

struct GlobalFlags {
    int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::string format = "csv";
    std::string timing = "on";

    TimingPolicy timing_policy() const { return TimingPolicy{timing == "on"}; }
};

int run(int argc, char** argv) {
    CLI::App app{"Stochastic optimal control of cascaded dam valleys: exact "
                 "dynamic programming, discrete SDDP, price decomposition "
                 "(DADP), policy simulation and benchmarks"};
    app.require_subcommand(1);

    GlobalFlags gf;
    app.add_option("--workers", gf.workers, "Worker threads for solvers and simulation")
        ->capture_default_str();
    app.add_option("--format", gf.format, "Table output format")
        ->check(CLI::IsMember({"csv", "md"}))
        ->capture_default_str();
    app.add_option("--timing", gf.timing,
                   "When off, every seconds column is written as 0.0 so reruns "
                   "are byte-identical")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();

    bool expand_marginals = false;
    app.add_flag("--expand-marginals", expand_marginals,
                 "Accept per-dam marginal noise entries and expand their product "
                 "(independent dams; capped at 256 atoms per stage)");
    auto load = [&](const std::string& path) {
        LoadOptions opts;
        opts.expand_marginals = expand_marginals;
        return load_valley(path, opts);
    };

    // ---- generate ----
    auto* cmd_gen = app.add_subcommand("generate", "Emit a synthetic valley JSON file");
    GenerateConfig gen_cfg;
    std::string gen_out;
    cmd_gen->add_option("--shape", gen_cfg.shape, "Valley topology")
        ->check(CLI::IsMember({"chain", "tree"}))
        ->capture_default_str();
    cmd_gen->add_option("--dams", gen_cfg.n_dams, "Number of dams")->capture_default_str();
    cmd_gen->add_option("--seed", gen_cfg.seed, "Generator seed")->capture_default_str();
    cmd_gen->add_option("--profile", gen_cfg.profile,
                        "academic (uniform capacities), realistic (10:1 "
                        "heterogeneous) or desk (small integer-exact)")
        ->check(CLI::IsMember({"academic", "realistic", "desk"}))
        ->capture_default_str();
    cmd_gen->add_option("--horizon", gen_cfg.horizon, "Stages (0 = profile default)")
        ->capture_default_str();
    cmd_gen->add_option("--out", gen_out, "Output valley JSON path")->required();
    cmd_gen->callback([&]() {
        Valley v = generate_valley(gen_cfg);
        save_valley(v, gen_out);
        std::cerr << "wrote " << gen_out << " (" << v.topology.n_dams << " dams, horizon "
                  << v.noise.horizon << ")\n";
    });

    // ---- solve ----
    auto* cmd_solve = app.add_subcommand("solve", "Compute value functions");
    cmd_solve->require_subcommand(1);

    // solve dp
    auto* cmd_dp = cmd_solve->add_subcommand(
        "dp", "Exact backward recursion on a product volume grid");
    std::string dp_valley, dp_out;
    int dp_knots = 21;
    double dp_budget = 1e9;
    cmd_dp->add_option("--valley", dp_valley, "Valley JSON")->required();
    cmd_dp->add_option("--knots", dp_knots, "Grid knots per dam")->capture_default_str();
    cmd_dp->add_option("--budget", dp_budget,
                       "Work cap: grid nodes x control combinations x atoms, "
                       "summed over stages")
        ->capture_default_str();
    cmd_dp->add_option("--out", dp_out, "Value-function JSON output")->required();
    cmd_dp->callback([&]() {
        Valley v = load(dp_valley);
        DpConfig cfg;
        cfg.knots = default_knots(v, dp_knots);
        cfg.work_budget = dp_budget;
        cfg.workers = gf.workers;
        DpRun run = solve_dp(v, cfg);
        save_value_set(run.values, dp_out);
        TimingPolicy tp = gf.timing_policy();
        std::ostringstream csv;
        csv << "stage,seconds\n";
        for (std::size_t t = 0; t < run.stage_seconds.size(); ++t)
            csv << t << ',' << fmt_double(tp.filter(run.stage_seconds[t])) << '\n';
        write_text(sibling(dp_out, ".timing.csv"), csv.str());
        std::cerr << "dp optimal payoff " << fmt_double(-run.value_at_x0) << ", "
                  << fmt_fixed(run.total_seconds, 3) << " s\n";
    });

    // solve sddpd
    auto* cmd_sddp = cmd_solve->add_subcommand(
        "sddpd", "Sampled cutting-plane recursion with discrete controls");
    std::string sddp_valley, sddp_out;
    SddpConfig sddp_cfg;
    int sddp_knots = 21;
    cmd_sddp->add_option("--valley", sddp_valley, "Valley JSON")->required();
    cmd_sddp->add_option("--iters", sddp_cfg.n_iterations, "Iterations")
        ->capture_default_str();
    cmd_sddp->add_option("--batch", sddp_cfg.forward_batch, "Forward passes per iteration")
        ->capture_default_str();
    cmd_sddp->add_option("--cuts", sddp_cfg.cut_capacity, "Cut pool capacity per stage")
        ->capture_default_str();
    cmd_sddp->add_option("--seed", sddp_cfg.rng_seed, "Scenario seed")->capture_default_str();
    cmd_sddp->add_option("--knots", sddp_knots,
                         "Finite-difference neighbor knots per dam for cut slopes")
        ->capture_default_str();
    cmd_sddp->add_option("--out", sddp_out, "Value-function JSON output")->required();
    cmd_sddp->callback([&]() {
        Valley v = load(sddp_valley);
        sddp_cfg.fd_knots = default_knots(v, sddp_knots);
        sddp_cfg.workers = gf.workers;
        SddpRun run = solve_sddp(v, sddp_cfg);
        save_value_set(run.values, sddp_out);
        TimingPolicy tp = gf.timing_policy();
        std::ostringstream csv;
        csv << "iteration,mean_forward_payoff,total_cuts,seconds\n";
        for (const SddpIterLog& l : run.log)
            csv << l.iteration << ',' << fmt_double(-l.mean_forward_cost) << ','
                << l.total_cuts << ',' << fmt_double(tp.filter(l.seconds)) << '\n';
        write_text(sibling(sddp_out, ".iterations.csv"), csv.str());
        double last = run.log.empty() ? 0.0 : -run.log.back().mean_forward_cost;
        std::cerr << "sddpd final mean forward payoff " << fmt_double(last) << ", "
                  << fmt_fixed(run.total_seconds, 3) << " s\n";
    });

    // solve dadp
    auto* cmd_dadp = cmd_solve->add_subcommand(
        "dadp", "Price decomposition with expected coupling multipliers");
    std::string dadp_valley, dadp_out, dadp_samples = "1000", dadp_opt = "qn";
    DadpConfig dadp_cfg;
    bool dadp_integer_z = false;
    cmd_dadp->add_option("--valley", dadp_valley, "Valley JSON")->required();
    cmd_dadp->add_option("--iters", dadp_cfg.max_iterations, "Multiplier iterations cap")
        ->capture_default_str();
    cmd_dadp->add_option("--tol", dadp_cfg.tolerance,
                         "Stop when the sup norm of the expected coupling "
                         "deviation falls below this (negative = 1e-3 x mean "
                         "dam capacity)")
        ->capture_default_str();
    cmd_dadp->add_option("--samples", dadp_samples,
                         "Gradient scenarios per evaluation, or 'exact' for "
                         "full state-distribution propagation")
        ->capture_default_str();
    cmd_dadp->add_option("--seed", dadp_cfg.rng_seed, "Gradient scenario seed")
        ->capture_default_str();
    cmd_dadp->add_option("--knots", dadp_cfg.knots_per_dam, "Volume knots per dam")
        ->capture_default_str();
    cmd_dadp->add_option("--optimizer", dadp_opt,
                         "qn (limited-memory quasi-Newton ascent) or fixed "
                         "(fixed-step gradient ascent)")
        ->check(CLI::IsMember({"qn", "fixed"}))
        ->capture_default_str();
    cmd_dadp->add_option("--rho", dadp_cfg.fixed_step_rho, "Fixed-step ascent rate")
        ->capture_default_str();
    cmd_dadp->add_flag("--integer-z-levels", dadp_integer_z,
                       "Use exhaustive integer upstream-inflow levels (integer "
                       "instances; makes the dual bound exact)");
    cmd_dadp->add_option("--out", dadp_out,
                         "Output directory (value_functions.json, "
                         "iterations.csv, multipliers.csv)")
        ->required();
    cmd_dadp->callback([&]() {
        Valley v = load(dadp_valley);
        if (dadp_samples == "exact")
            dadp_cfg.exact_expectation = true;
        else
            dadp_cfg.gradient_samples = std::stoi(dadp_samples);
        dadp_cfg.optimizer = dadp_opt == "fixed" ? DadpConfig::Optimizer::FixedStep
                                                 : DadpConfig::Optimizer::QuasiNewton;
        if (dadp_integer_z) dadp_cfg.z_levels = integer_z_levels(v);
        dadp_cfg.workers = gf.workers;
        DadpRun run = solve_dadp(v, dadp_cfg);

        std::filesystem::create_directories(dadp_out);
        auto in_dir = [&](const char* f) {
            return (std::filesystem::path(dadp_out) / f).string();
        };
        save_value_set(run.values, in_dir("value_functions.json"));
        TimingPolicy tp = gf.timing_policy();
        std::ostringstream csv;
        csv << "iteration,dual_payoff_bound,gradient_inf,seconds\n";
        for (const DadpIterLog& l : run.log)
            csv << l.k << ',' << fmt_double(-l.dual_value) << ',' << fmt_double(l.grad_inf)
                << ',' << fmt_double(tp.filter(l.seconds)) << '\n';
        write_text(in_dir("iterations.csv"), csv.str());
        std::ostringstream mcsv;
        mcsv << "iteration,link_dam_id,t,lambda\n";
        for (std::size_t k = 0; k < run.lambda_history.size(); ++k)
            for (std::size_t l = 0; l < run.dual.link_dams.size(); ++l)
                for (std::size_t t = 0; t < run.lambda_history[k][l].size(); ++t)
                    mcsv << k << ',' << v.dams[run.dual.link_dams[l]].id << ',' << t << ','
                         << fmt_double(run.lambda_history[k][l][t]) << '\n';
        write_text(in_dir("multipliers.csv"), mcsv.str());
        std::cerr << "dadp dual payoff bound " << fmt_double(-run.dual_value)
                  << (run.converged ? "" : " (iteration cap reached)") << ", "
                  << fmt_fixed(run.total_seconds, 3) << " s\n";
    });

    // ---- simulate ----
    auto* cmd_sim = app.add_subcommand(
        "simulate", "Run the one-step-lookahead policy for a value-function file "
                    "and report achieved payoff");
    std::string sim_valley, sim_vf, sim_out, sim_method;
    int sim_n = 100000, sim_bins = 20;
    std::uint64_t sim_seed = 0;
    cmd_sim->add_option("--valley", sim_valley, "Valley JSON")->required();
    cmd_sim->add_option("--vf", sim_vf,
                        "Value-function JSON file, or a solve output directory "
                        "containing value_functions.json")
        ->required();
    cmd_sim->add_option("--n", sim_n, "Scenario count")->capture_default_str();
    cmd_sim->add_option("--seed", sim_seed, "Scenario seed")->capture_default_str();
    cmd_sim->add_option("--bins", sim_bins, "Payoff histogram bins")->capture_default_str();
    cmd_sim->add_option("--method", sim_method,
                        "Method label in the report (default: from the "
                        "value-function kind)");
    cmd_sim->add_option("--out", sim_out, "Report CSV path")->required();
    cmd_sim->callback([&]() {
        Valley v = load(sim_valley);
        std::string vf_path = sim_vf;
        if (std::filesystem::is_directory(vf_path))
            vf_path = (std::filesystem::path(vf_path) / "value_functions.json").string();
        ValueSet vs = load_value_set(vf_path);
        GlobalValue gv = make_global_value(v, vs);
        PolicyConfig pc;
        pc.workers = gf.workers;
        SimReport rep = simulate(v, gv, sim_n, sim_seed, pc);

        MethodReport mr;
        mr.method = sim_method.empty() ? method_name(vs.kind) : sim_method;
        mr.n_scenarios = rep.n_scenarios;
        mr.mean_payoff = rep.mean_payoff;
        mr.std_error = rep.std_error;
        if (vs.kind != "sddp-cuts") {
            std::vector<double> x0(v.dams.size());
            for (std::size_t i = 0; i < v.dams.size(); ++i) x0[i] = v.dams[i].x0;
            // dp-grid: optimal payoff estimate; dadp-sum: dual upper bound.
            mr.payoff_bound = -gv.eval(0, x0.data());
        }
        mr.seconds = gf.timing_policy().filter(rep.seconds);
        mr.used_fallback = rep.used_fallback;
        write_report_csv(mr, sim_out);
        std::string stem = sim_out;
        if (stem.size() > 4 && stem.substr(stem.size() - 4) == ".csv")
            stem.resize(stem.size() - 4);
        write_histogram_csv(rep.payoffs, sim_bins, stem + ".hist.csv");
        write_trajectory_csv(rep, stem + ".traj.csv");
        std::cerr << "achieved payoff " << fmt_double(rep.mean_payoff) << " +/- "
                  << fmt_double(rep.std_error) << " (SE), violations "
                  << rep.violation_count << "\n";
        if (rep.violation_count > 0)
            throw ValidationError("simulated trajectories failed the replay check");
    });

    // ---- compare ----
    auto* cmd_cmp = app.add_subcommand("compare", "Tabulate report CSVs side by side");
    std::vector<std::string> cmp_reports;
    std::string cmp_out;
    cmd_cmp->add_option("--reports", cmp_reports, "Report CSV files (first = reference)")
        ->required()
        ->expected(-1);
    cmd_cmp->add_option("--out", cmp_out, "Write the table here instead of stdout");
    cmd_cmp->callback([&]() {
        std::vector<MethodReport> reports;
        for (const std::string& p : cmp_reports) reports.push_back(read_report_csv(p));
        std::string table = compare_table(reports, gf.format);
        if (cmp_out.empty())
            std::cout << table;
        else
            write_text(cmp_out, table);
    });

    // ---- bench ----
    auto* cmd_bench = app.add_subcommand(
        "bench", "Time optimization stages over generated valleys of growing size");
    BenchConfig bench_cfg;
    bench_cfg.dam_counts = {4, 8};
    bench_cfg.solvers = {"dadp"};
    std::string bench_out;
    cmd_bench->add_option("--shape", bench_cfg.shape, "Valley topology")
        ->check(CLI::IsMember({"chain", "tree"}))
        ->capture_default_str();
    cmd_bench->add_option("--dams", bench_cfg.dam_counts, "Dam counts to sweep")
        ->capture_default_str();
    cmd_bench->add_option("--solvers", bench_cfg.solvers, "Solvers: dp dadp sddpd")
        ->capture_default_str();
    cmd_bench->add_option("--seed", bench_cfg.seed, "Instance seed")->capture_default_str();
    cmd_bench->add_option("--profile", bench_cfg.profile, "Generator profile")
        ->check(CLI::IsMember({"academic", "realistic", "desk"}))
        ->capture_default_str();
    cmd_bench->add_option("--horizon", bench_cfg.horizon, "Stages (0 = profile default)")
        ->capture_default_str();
    cmd_bench->add_option("--timeout", bench_cfg.timeout_seconds,
                          "Per-instance wall-time cap in seconds (0 = none)")
        ->capture_default_str();
    cmd_bench->add_option("--repeats", bench_cfg.repeats, "Timing repeats (min is kept)")
        ->capture_default_str();
    cmd_bench->add_option("--dp-knots", bench_cfg.dp_knots, "dp grid knots per dam")
        ->capture_default_str();
    cmd_bench->add_option("--dp-budget", bench_cfg.dp_budget, "dp work cap")
        ->capture_default_str();
    cmd_bench->add_option("--dadp-knots", bench_cfg.dadp_knots, "dadp knots per dam")
        ->capture_default_str();
    cmd_bench->add_option("--dadp-iters", bench_cfg.dadp_iterations,
                          "dadp multiplier iterations (fixed-step, run to the cap)")
        ->capture_default_str();
    cmd_bench->add_option("--dadp-samples", bench_cfg.dadp_samples,
                          "dadp gradient scenarios")
        ->capture_default_str();
    cmd_bench->add_option("--dadp-rho", bench_cfg.dadp_rho, "dadp ascent rate")
        ->capture_default_str();
    cmd_bench->add_option("--sddp-iters", bench_cfg.sddp_iterations, "sddpd iterations")
        ->capture_default_str();
    cmd_bench->add_option("--sddp-batch", bench_cfg.sddp_batch, "sddpd forward batch")
        ->capture_default_str();
    cmd_bench->add_option("--sddp-cuts", bench_cfg.sddp_cuts, "sddpd cut capacity")
        ->capture_default_str();
    cmd_bench->add_option("--sddp-knots", bench_cfg.sddp_knots, "sddpd slope knots")
        ->capture_default_str();
    cmd_bench->add_option("--out", bench_out, "Scaling CSV path (default stdout)");
    cmd_bench->callback([&]() {
        bench_cfg.workers = gf.workers;
        std::vector<BenchRow> rows = bench_scaling(bench_cfg);
        std::string csv = bench_csv(rows, gf.timing_policy());
        if (bench_out.empty())
            std::cout << csv;
        else
            write_text(bench_out, csv);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the message
        return 2;    // bad flags are validation failures
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const valleyopt::BudgetError& e) {
        std::cerr << "budget/timeout: " << e.what() << "\n";
        return 3;
    } catch (const valleyopt::ValidationError& e) {
        std::cerr << "validation: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
