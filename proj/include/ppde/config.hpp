#pragma once

#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "ppde/errors.hpp"
#include "ppde/families.hpp"
#include "ppde/model.hpp"

namespace ppde {

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct HittingConfig {
    double alpha = 0.2;
    std::vector<double> x_list{0.0, 0.0125, 0.025, 0.05, 0.1};
    std::vector<double> delta_list{0.01, 0.02, 0.05, 0.1};
    std::size_t n_paths = 2000;
    std::size_t n_steps = 1000;
};

/// Every knob with its default; `echo()` is the canonical form that gets hashed.
struct ExperimentConfig {
    json problem = "quadratic_martingale";
    std::uint64_t seed = 1;
    std::string out = "ppde_out";
    int threads = 0;

    std::size_t tree_steps = 200;
    std::size_t lsmc_steps = 50;
    std::size_t paths = 20000;
    int basis_degree = 2;
    std::vector<std::size_t> step_grid{25, 50, 100, 200};
    std::vector<std::size_t> path_grid{1000, 4000, 16000};
    std::size_t penalty_steps = 4;
    std::vector<double> m_schedule{1, 2, 4, 8, 16, 32, 64, 128, 256};
    std::vector<double> alphas{0.4, 0.2, 0.1};
    double m = 256.0;
    int depth_cap = 2;
    double L = 1.0;
    std::size_t lattice_steps = 20;
    std::size_t dpp_steps = 4;
    std::vector<double> dpp_t1{0.5, 1.0};
    std::vector<double> dpp_delta{0.6};
    int validate_probes = 300;
    HittingConfig hitting;

    [[nodiscard]] json echo() const {
        return {{"problem", problem},
                {"seed", seed},
                {"out", out},
                {"threads", threads},
                {"solver",
                 {{"tree_steps", tree_steps},
                  {"lsmc_steps", lsmc_steps},
                  {"paths", paths},
                  {"basis_degree", basis_degree},
                  {"step_grid", step_grid},
                  {"path_grid", path_grid},
                  {"penalty_steps", penalty_steps},
                  {"m_schedule", m_schedule},
                  {"alphas", alphas},
                  {"m", m},
                  {"depth_cap", depth_cap},
                  {"L", L},
                  {"lattice_steps", lattice_steps},
                  {"dpp_steps", dpp_steps},
                  {"dpp_t1", dpp_t1},
                  {"dpp_delta", dpp_delta},
                  {"validate_probes", validate_probes}}},
                {"hitting",
                 {{"alpha", hitting.alpha},
                  {"x_list", hitting.x_list},
                  {"delta_list", hitting.delta_list},
                  {"n_paths", hitting.n_paths},
                  {"n_steps", hitting.n_steps}}}};
    }

    [[nodiscard]] std::string hash() const { return hex64(fnv1a64(echo().dump())); }

    /// Problem from a built-in name, {"instance": name, ...overrides}, or a full description.
    [[nodiscard]] ProblemData problem_data() const {
        if (problem.is_string()) return named_problem(problem.get<std::string>());
        if (!problem.is_object()) throw ParameterError("config: problem must be a name or an object");
        if (problem.contains("instance")) {
            json base = named_instance(problem.at("instance").get<std::string>());
            for (const auto& [k, v] : problem.items())
                if (k != "instance") base[k] = v;
            return problem_from_json(base);
        }
        return problem_from_json(problem);
    }
};

namespace detail {
template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

template <class T>
void require_positive(const std::vector<T>& v, const char* name) {
    if (v.empty()) throw ParameterError(std::string("config: ") + name + " must not be empty");
    for (const auto& x : v)
        if (!(x > T{0})) throw ParameterError(std::string("config: ") + name + " entries must be positive");
}
}  // namespace detail

inline void validate_config(const ExperimentConfig& c) {
    if (c.tree_steps < 1 || c.lsmc_steps < 1 || c.penalty_steps < 1 || c.lattice_steps < 1 || c.dpp_steps < 1)
        throw ParameterError("config: step counts must be >= 1");
    if (c.paths < 2) throw ParameterError("config: paths must be >= 2");
    if (c.basis_degree < 0) throw ParameterError("config: basis_degree must be >= 0");
    if (c.depth_cap < 0) throw ParameterError("config: depth_cap must be >= 0");
    if (!(c.m >= 0.0)) throw ParameterError("config: m must be >= 0");
    if (!(c.L > 0.0)) throw ParameterError("config: L must be positive");
    if (c.threads < 0) throw ParameterError("config: threads must be >= 0");
    if (c.validate_probes < 1) throw ParameterError("config: validate_probes must be >= 1");
    detail::require_positive(c.step_grid, "step_grid");
    detail::require_positive(c.path_grid, "path_grid");
    detail::require_positive(c.m_schedule, "m_schedule");
    detail::require_positive(c.alphas, "alphas");
    detail::require_positive(c.dpp_t1, "dpp_t1");
    if (!(c.hitting.alpha > 0.0) || c.hitting.n_paths < 2 || c.hitting.n_steps < 2)
        throw ParameterError("config: bad hitting options");
    (void)c.problem_data();
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    detail::read_opt(j, "problem", c.problem);
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "out", c.out);
    detail::read_opt(j, "threads", c.threads);
    if (j.contains("solver")) {
        const auto& s = j.at("solver");
        detail::read_opt(s, "tree_steps", c.tree_steps);
        detail::read_opt(s, "lsmc_steps", c.lsmc_steps);
        detail::read_opt(s, "paths", c.paths);
        detail::read_opt(s, "basis_degree", c.basis_degree);
        detail::read_opt(s, "step_grid", c.step_grid);
        detail::read_opt(s, "path_grid", c.path_grid);
        detail::read_opt(s, "penalty_steps", c.penalty_steps);
        detail::read_opt(s, "m_schedule", c.m_schedule);
        detail::read_opt(s, "alphas", c.alphas);
        detail::read_opt(s, "m", c.m);
        detail::read_opt(s, "depth_cap", c.depth_cap);
        detail::read_opt(s, "L", c.L);
        detail::read_opt(s, "lattice_steps", c.lattice_steps);
        detail::read_opt(s, "dpp_steps", c.dpp_steps);
        detail::read_opt(s, "dpp_t1", c.dpp_t1);
        detail::read_opt(s, "dpp_delta", c.dpp_delta);
        detail::read_opt(s, "validate_probes", c.validate_probes);
    }
    if (j.contains("hitting")) {
        const auto& h = j.at("hitting");
        detail::read_opt(h, "alpha", c.hitting.alpha);
        detail::read_opt(h, "x_list", c.hitting.x_list);
        detail::read_opt(h, "delta_list", c.hitting.delta_list);
        detail::read_opt(h, "n_paths", c.hitting.n_paths);
        detail::read_opt(h, "n_steps", c.hitting.n_steps);
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParameterError(std::string("config: ") + e.what());
    }
    return config_from_json(j);
}

/// CSV preamble: config hash, seed and the canonical config as comment lines.
inline void write_csv_preamble(std::ostream& os, const ExperimentConfig& c) {
    os << "# config_hash: " << c.hash() << "\n# seed: " << c.seed << "\n# config: " << c.echo().dump() << '\n';
}

inline json report_envelope(const ExperimentConfig& c, const std::string& command, json result) {
    return {{"command", command}, {"config", c.echo()}, {"config_hash", c.hash()}, {"seed", c.seed}, {"result", std::move(result)}};
}

}  // namespace ppde
