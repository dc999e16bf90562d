#pragma once

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ppde/config.hpp"
#include "ppde/errors.hpp"
#include "ppde/frozen_scheme.hpp"
#include "ppde/lattice.hpp"
#include "ppde/model.hpp"
#include "ppde/nonlinear_expectation.hpp"
#include "ppde/parallel.hpp"
#include "ppde/rbsde_solver.hpp"
#include "ppde/simulate.hpp"

namespace ppde {

namespace cli {

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    std::string method;
};

inline bool tree_capable(const ProblemData& d) { return d.d == 1 && d.dependence == PathDependence::current_value; }

inline PathPoint origin(const DiscretePath& p) { return PathPoint{0.0, p}; }

/// Best LSMC estimate over constant and one-switch policies.
inline Estimate lsmc_estimate(const ProblemData& data, std::size_t steps, std::size_t paths, int degree, std::uint64_t seed) {
    const auto base = point_path(0.0, Vec::Zero(data.d), data.T / static_cast<double>(steps));
    std::vector<ControlPolicy> family;
    const int nk = data.n_controls();
    for (int k = 0; k < nk; ++k) family.push_back(ControlPolicy::constant(k, steps));
    for (int a = 0; a < nk; ++a)
        for (int b = 0; b < nk; ++b)
            if (a != b) family.push_back(ControlPolicy::one_switch(a, b, steps / 2, steps));
    BasisSpec basis;
    basis.degree = degree;
    Estimate e;
    e.value = -std::numeric_limits<double>::infinity();
    e.method = "lsmc";
    for (const auto& pol : family) {
        const auto b = euler_bundle(data, origin(base), pol, steps, paths, seed);
        const auto sol = solve_rbsde_lsmc(data, b, basis);
        if (sol.y0 > e.value) {
            e.value = sol.y0;
            e.std_error = sol.std_error;
        }
    }
    return e;
}

inline Estimate tree_estimate(const ProblemData& data, std::size_t steps) {
    const auto base = point_path(0.0, 0.0);
    return {solve_rbsde_tree(data, origin(base), steps).y0, 0.0, "tree"};
}

inline Estimate reference_value(const ProblemData& data, const ExperimentConfig& c) {
    return tree_capable(data) ? tree_estimate(data, c.tree_steps) : lsmc_estimate(data, c.lsmc_steps, c.paths, c.basis_degree, c.seed);
}

inline std::ofstream open_out(const ExperimentConfig& c, const std::string& file) {
    std::ofstream os(std::filesystem::path(c.out) / file);
    if (!os) throw ParameterError("cannot write " + file + " in " + c.out);
    return os;
}

inline void write_json(const ExperimentConfig& c, const std::string& file, const json& j) {
    auto os = open_out(c, file);
    os << j.dump(2) << '\n';
}

inline int cmd_value(const ExperimentConfig& c, std::ostream& out) {
    const auto data = c.problem_data();
    std::vector<Estimate> rows;
    if (tree_capable(data)) rows.push_back(tree_estimate(data, c.tree_steps));
    rows.push_back(lsmc_estimate(data, c.lsmc_steps, c.paths, c.basis_degree, c.seed));
    auto os = open_out(c, "value.csv");
    write_csv_preamble(os, c);
    os << "method,estimate,std_error,ci_low,ci_high\n" << std::setprecision(12);
    json res = json::array();
    for (const auto& r : rows) {
        const double half = 1.96 * r.std_error;
        os << r.method << ',' << r.value << ',' << r.std_error << ',' << r.value - half << ',' << r.value + half << '\n';
        res.push_back({{"method", r.method}, {"estimate", r.value}, {"std_error", r.std_error}});
    }
    write_json(c, "value.json", report_envelope(c, "value", res));
    out << "value: " << rows.front().method << " " << rows.front().value << '\n';
    return 0;
}

inline int cmd_converge(const ExperimentConfig& c, std::ostream& out) {
    const auto data = c.problem_data();
    auto os = open_out(c, "converge.csv");
    write_csv_preamble(os, c);
    os << "sweep,parameter,estimate,std_error\n" << std::setprecision(12);
    const auto base = point_path(0.0, 0.0);
    if (tree_capable(data)) {
        for (std::size_t n : c.step_grid) os << "tree_steps," << n << ',' << tree_estimate(data, n).value << ",0\n";
        for (double m : c.m_schedule) {
            TreeOptions o;
            o.n_steps = c.penalty_steps;
            o.reflect = false;
            o.penalty = m;
            o.implicit_penalty = true;
            os << "penalty_m," << m << ',' << solve_rbsde_tree(data, origin(base), o).y0 << ",0\n";
        }
        os << "penalty_m,reflected," << tree_estimate(data, c.penalty_steps).value << ",0\n";
        for (std::size_t n : c.step_grid) {
            const auto lat = make_lattice(data.T, n, c.L, data.c0);
            const auto r = snell_upper(lat, [&](std::size_t i, double x) {
                const double t = lat.time(i);
                return data.h(PathPoint{t, point_path(t, x)});
            });
            os << "lattice_steps," << n << ',' << r.value << ",0\n";
        }
    }
    for (std::size_t n : c.path_grid) {
        const auto e = lsmc_estimate(data, c.lsmc_steps, n, c.basis_degree, c.seed);
        os << "lsmc_paths," << n << ',' << e.value << ',' << e.std_error << '\n';
    }
    if (data.d == 1)
        for (double a : c.alphas) {
            const auto e = envelope_values(data, a, c.m, c.depth_cap);
            os << "alpha_psi0," << a << ',' << e.psi0 << ",0\n";
            os << "alpha_phi0," << a << ',' << e.phi0 << ",0\n";
            os << "alpha_gap," << a << ',' << e.gap() << ",0\n";
        }
    out << "converge: wrote converge.csv\n";
    return 0;
}

inline int cmd_sandwich(const ExperimentConfig& c, std::ostream& out) {
    const auto data = c.problem_data();
    const auto u0 = reference_value(data, c);
    const double slack = 1e-2 + 1e-3 + 3.0 * u0.std_error;
    const auto rep = sandwich_check(data, c.alphas, c.m, u0.value, slack, c.depth_cap);
    auto os = open_out(c, "sandwich.csv");
    write_csv_preamble(os, c);
    write_csv(os, rep);
    json rows = json::array();
    for (const auto& r : rep.rows)
        rows.push_back({{"alpha", r.env.alpha}, {"psi0", r.env.psi0}, {"phi0", r.env.phi0}, {"gap", r.env.gap()}, {"holds", r.holds},
                        {"cells", r.env.cells}, {"fallback_solves", r.env.fallback_solves}, {"fallback", r.env.fallback_method}});
    write_json(c, "sandwich.json",
               report_envelope(c, "sandwich",
                               {{"u0", u0.value}, {"u0_method", u0.method}, {"slack", slack}, {"all_hold", rep.all_hold},
                                {"gap_nonincreasing", rep.gap_nonincreasing}, {"rows", rows}}));
    out << "sandwich: " << (rep.all_hold ? "holds" : "violated") << ", gap " << (rep.gap_nonincreasing ? "nonincreasing" : "not monotone")
        << '\n';
    return rep.all_hold ? 0 : 1;
}

inline int cmd_snell(const ExperimentConfig& c, std::ostream& out) {
    const auto data = c.problem_data();
    if (!tree_capable(data)) throw DomainError("snell: needs d = 1 current-value data");
    const auto lat = make_lattice(data.T, c.lattice_steps, c.L, data.c0);
    const auto X = [&](std::size_t i, double x) {
        const double t = lat.time(i);
        return data.h(PathPoint{t, point_path(t, x)});
    };
    const auto r = snell_upper(lat, X);
    const auto chk = snell_check(lat, r);
    auto os = open_out(c, "snell.csv");
    write_csv_preamble(os, c);
    write_csv(os, lat, r);
    write_json(c, "snell.json",
               report_envelope(c, "snell",
                               {{"value", r.value}, {"dx", lat.dx}, {"dt", lat.dt}, {"dominance", chk.dominance},
                                {"supermartingale", chk.supermartingale}, {"martingale_to_tau", chk.martingale_to_tau}}));
    out << "snell: " << r.value << '\n';
    return 0;
}

inline int cmd_dpp(const ExperimentConfig& c, std::ostream& out) {
    const auto data = c.problem_data();
    const auto base = point_path(0.0, 0.0);
    auto os = open_out(c, "dpp.csv");
    write_csv_preamble(os, c);
    os << "variant,t1,delta,direct,nested,residual\n" << std::setprecision(12);
    DppOptions o;
    o.n_steps = c.dpp_steps;
    for (double t1 : c.dpp_t1) {
        const auto r = dpp_residual(data, origin(base), t1, o);
        os << "deterministic," << t1 << ",," << r.direct << ',' << r.nested << ',' << r.residual << '\n';
    }
    for (double d : c.dpp_delta) {
        DppOptions od = o;
        od.delta = d;
        const auto r = dpp_residual(data, origin(base), data.T, od);
        os << "hitting," << data.T << ',' << d << ',' << r.direct << ',' << r.nested << ',' << r.residual << '\n';
    }
    out << "dpp: wrote dpp.csv\n";
    return 0;
}

inline int cmd_hitting(const ExperimentConfig& c, std::ostream& out) {
    const auto data = c.problem_data();
    HittingGapOptions o;
    o.alpha = c.hitting.alpha;
    o.x_list = c.hitting.x_list;
    o.delta_list = c.hitting.delta_list;
    o.n_paths = c.hitting.n_paths;
    o.n_steps = c.hitting.n_steps;
    o.L = c.L;
    o.c0 = data.c0;
    o.T = data.T;
    o.seed = c.seed;
    const auto r = hitting_gap_diagnostic(o);
    json cells = json::array();
    for (const auto& cell : r.cells)
        cells.push_back({{"x", cell.x}, {"delta", cell.delta}, {"probability", cell.probability}, {"std_error", cell.std_error},
                         {"bound", cell.bound}});
    json holder = json::array();
    for (const auto& [C, f] : r.holder_frequency) holder.push_back({{"C", C}, {"frequency", f}});
    write_json(c, "hitting.json",
               report_envelope(c, "diagnose-hitting",
                               {{"cells", cells}, {"x_list", r.x_list}, {"ch0_gap_mean", r.ch0_gap_mean}, {"ch0_gap_se", r.ch0_gap_se},
                                {"probability_fit", r.probability_fit}, {"linear_fit", r.linear_fit},
                                {"nonincreasing_in_delta", r.nonincreasing_in_delta}, {"vanishing_in_x", r.vanishing_in_x},
                                {"probability_dominated", r.probability_dominated}, {"ch0_linear_dominated", r.ch0_linear_dominated},
                                {"holder_frequency", holder}}));
    out << "diagnose-hitting: wrote hitting.json\n";
    return 0;
}

inline int cmd_validate(const ExperimentConfig& c, std::ostream& out) {
    const auto data = c.problem_data();
    const auto rep = validate(data, c.validate_probes, c.seed);
    json clauses = json::array();
    for (const auto& cl : rep.clauses)
        clauses.push_back({{"name", cl.name}, {"passed", cl.passed}, {"worst", cl.worst}, {"detail", cl.detail}});
    write_json(c, "validate.json", report_envelope(c, "validate", {{"all_passed", rep.all_passed()}, {"clauses", clauses}}));
    for (const auto& cl : rep.clauses) out << cl.name << ": " << (cl.passed ? "pass" : "FAIL") << '\n';
    return rep.all_passed() ? 0 : 3;
}

inline std::string error_type(const std::exception& e) {
    if (dynamic_cast<const DomainError*>(&e)) return "domain_error";
    if (dynamic_cast<const ParameterError*>(&e)) return "parameter_error";
    if (dynamic_cast<const NumericError*>(&e)) return "numeric_error";
    if (dynamic_cast<const BudgetError*>(&e)) return "budget_error";
    if (dynamic_cast<const json::exception*>(&e)) return "config_error";
    return "error";
}

}  // namespace cli

/// Exit codes: 0 ok, 1 sandwich violated, 2 error, 3 validation failed.
inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Obstacle problems for path-dependent PDEs: solvers and diagnostics"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    app.add_option("--config", config_path, "JSON configuration file");
    app.add_option("--seed", seed, "Random seed");
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--threads", threads, "Worker threads (PPDE_THREADS overrides)");
    const std::vector<std::pair<std::string, std::string>> commands{
        {"value", "u0 with confidence interval"},
        {"converge", "tables over steps, paths, m and alpha"},
        {"sandwich", "envelope gaps and the sandwich check"},
        {"snell", "lattice Snell envelope and stopping field"},
        {"dpp", "dynamic programming residual table"},
        {"diagnose-hitting", "cascade hitting-time gap report"},
        {"validate", "assumption report"}};
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);
    app.allow_windows_style_options(false);
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    std::string command = "none";
    ExperimentConfig cfg;
    try {
        app.parse(argc, argv);
        command = app.get_subcommands().front()->get_name();
        if (!out_dir.empty()) cfg.out = out_dir;
        if (!config_path.empty()) cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out = out_dir;
        if (threads) cfg.threads = *threads;
        validate_config(cfg);
        set_num_threads(cfg.threads);
        std::filesystem::create_directories(cfg.out);
        if (command == "value") return cli::cmd_value(cfg, out);
        if (command == "converge") return cli::cmd_converge(cfg, out);
        if (command == "sandwich") return cli::cmd_sandwich(cfg, out);
        if (command == "snell") return cli::cmd_snell(cfg, out);
        if (command == "dpp") return cli::cmd_dpp(cfg, out);
        if (command == "diagnose-hitting") return cli::cmd_hitting(cfg, out);
        return cli::cmd_validate(cfg, out);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        const json rec = {{"error", {{"type", "usage_error"}, {"message", e.what()}}}, {"command", command}};
        err << rec.dump() << '\n';
        return 2;
    } catch (const std::exception& e) {
        const json rec = {{"error", {{"type", cli::error_type(e)}, {"message", e.what()}}},
                          {"command", command},
                          {"config_hash", cfg.hash()}};
        err << rec.dump() << '\n';
        std::error_code ec;
        std::filesystem::create_directories(cfg.out, ec);
        if (!ec) {
            std::ofstream os(std::filesystem::path(cfg.out) / "error.json");
            if (os) os << rec.dump(2) << '\n';
        }
        return 2;
    }
}

}  // namespace ppde
