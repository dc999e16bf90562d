#pragma once

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ppde/errors.hpp"
#include "ppde/model.hpp"

namespace ppde {

using json = nlohmann::json;

namespace detail {

inline double num(const json& j, const char* key, double def) { return j.contains(key) ? j.at(key).get<double>() : def; }

inline double clamp_abs(double v, double cap) { return std::clamp(v, -cap, cap); }

/// Spot map S = S0 exp((r - vol^2/2) t + x) used by the put families.
struct SpotMap {
    double spot = 100.0, rate = 0.05, vol = 0.2;
    [[nodiscard]] double operator()(double t, double x) const {
        return spot * std::exp((rate - 0.5 * vol * vol) * t + x);
    }
};

inline SpotMap spot_map(const json& j) {
    return {num(j, "spot", 100.0), num(j, "rate", 0.05), num(j, "vol", 0.2)};
}

}  // namespace detail

/// F families: zero, constant{value}, linear_y{rate, value}: F = -rate y + value.
inline Driver make_driver(const json& spec) {
    const std::string fam = spec.value("family", "zero");
    if (fam == "zero") return [](const PathPoint&, double, const Vec&, int) { return 0.0; };
    if (fam == "constant") {
        const double c = detail::num(spec, "value", 0.0);
        return [c](const PathPoint&, double, const Vec&, int) { return c; };
    }
    if (fam == "linear_y") {
        const double r = detail::num(spec, "rate", 0.0);
        const double c = detail::num(spec, "value", 0.0);
        return [r, c](const PathPoint&, double y, const Vec&, int) { return -r * y + c; };
    }
    throw DomainError("unknown F family: " + fam);
}

/// h families: constant{value}, abs{cap}, put{strike, spot, rate, vol}, running_max{cap}.
inline Barrier make_barrier(const json& spec, bool& path_dependent) {
    const std::string fam = spec.value("family", "constant");
    if (fam == "constant") {
        const double c = detail::num(spec, "value", 0.0);
        return [c](const PathPoint&) { return c; };
    }
    if (fam == "abs") {
        const double cap = detail::num(spec, "cap", 1e300);
        return [cap](const PathPoint& p) { return std::min(state_at(p).norm(), cap); };
    }
    if (fam == "put") {
        const double K = detail::num(spec, "strike", 100.0);
        const auto S = detail::spot_map(spec);
        return [K, S](const PathPoint& p) { return std::max(K - S(p.t, state_at_scalar(p)), 0.0); };
    }
    if (fam == "running_max") {
        path_dependent = true;
        const double cap = detail::num(spec, "cap", 1e300);
        return [cap](const PathPoint& p) { return std::min(running_extrema(p).first, cap); };
    }
    throw DomainError("unknown h family: " + fam);
}

/// xi families: linear{coef, cap}, square{cap}, neg_square{cap}, abs{cap}, put{strike, spot, rate, vol},
/// running_max{cap}.
inline Terminal make_terminal(const json& spec, double T, bool& path_dependent) {
    const std::string fam = spec.value("family", "linear");
    const double cap = detail::num(spec, "cap", 1e300);
    auto end = [](const DiscretePath& w) { return w.at(w.size() - 1); };
    if (fam == "linear") {
        const double a = detail::num(spec, "coef", 1.0);
        return [a, cap, end](const DiscretePath& w) { return detail::clamp_abs(a * end(w)(0), cap); };
    }
    if (fam == "square")
        return [cap, end](const DiscretePath& w) { return std::min(end(w).squaredNorm(), cap); };
    if (fam == "neg_square")
        return [cap, end](const DiscretePath& w) { return -std::min(end(w).squaredNorm(), cap); };
    if (fam == "abs")
        return [cap, end](const DiscretePath& w) { return std::min(end(w).norm(), cap); };
    if (fam == "put") {
        const double K = detail::num(spec, "strike", 100.0);
        const auto S = detail::spot_map(spec);
        return [K, S, T, end](const DiscretePath& w) { return std::max(K - S(T, end(w)(0)), 0.0); };
    }
    if (fam == "running_max") {
        path_dependent = true;
        return [cap, T](const DiscretePath& w) { return std::min(running_extrema(PathPoint{T, w}).first, cap); };
    }
    throw DomainError("unknown xi family: " + fam);
}

/// ProblemData from a structured configuration:
/// {name, d, T, sigma: [scalars or d x d matrices], F, h, xi, M0, L0, rho0: {c, beta}, c0}.
inline ProblemData problem_from_json(const json& cfg) {
    ProblemData p;
    p.name = cfg.value("name", "problem");
    p.d = cfg.value("d", 1);
    p.T = cfg.value("T", 1.0);
    if (!(p.T > 0.0)) throw ParameterError("T must be positive");
    if (p.d < 1) throw ParameterError("d must be >= 1");
    const json sig = cfg.value("sigma", json::array({1.0}));
    for (const auto& s : sig) {
        Mat m(p.d, p.d);
        if (s.is_number()) m = Mat::Identity(p.d, p.d) * s.get<double>();
        else {
            if (static_cast<int>(s.size()) != p.d) throw ParameterError("sigma matrix has wrong shape");
            for (int r = 0; r < p.d; ++r) {
                if (static_cast<int>(s[static_cast<std::size_t>(r)].size()) != p.d) throw ParameterError("sigma matrix has wrong shape");
                for (int c = 0; c < p.d; ++c) m(r, c) = s[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
            }
        }
        p.sigma.push_back(m);
    }
    bool path_dep = false;
    p.F = make_driver(cfg.value("F", json{{"family", "zero"}}));
    p.h = make_barrier(cfg.value("h", json{{"family", "constant"}, {"value", -10.0}}), path_dep);
    p.xi = make_terminal(cfg.value("xi", json{{"family", "linear"}}), p.T, path_dep);
    p.dependence = path_dep ? PathDependence::running_extrema : PathDependence::current_value;
    p.M0 = cfg.value("M0", 100.0);
    p.L0 = cfg.value("L0", 0.5);
    if (cfg.contains("rho0")) p.rho0 = Modulus{cfg["rho0"].value("c", 1.0), cfg["rho0"].value("beta", 0.5)};
    double smin = 1e300;
    for (const auto& m : p.sigma) {
        const Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
        smin = std::min(smin, es.eigenvalues().minCoeff());
    }
    p.c0 = cfg.value("c0", p.sigma.empty() ? 0.0 : smin);
    return p;
}

/// Named instances used by tests, demos and the acceptance suite.
inline json named_instance(const std::string& name) {
    if (name == "quadratic_martingale")
        return {{"name", name}, {"T", 1.0}, {"sigma", {1.0}}, {"F", {{"family", "zero"}}},
                {"h", {{"family", "constant"}, {"value", -10.0}}}, {"xi", {{"family", "square"}, {"cap", 100.0}}},
                {"M0", 100.0}, {"L0", 0.5}, {"rho0", {{"c", 10.0}, {"beta", 1.0}}}, {"c0", 1.0}};
    if (name == "linear_terminal")
        return {{"name", name}, {"T", 1.0}, {"sigma", {1.0}}, {"F", {{"family", "zero"}}},
                {"h", {{"family", "constant"}, {"value", -10.0}}}, {"xi", {{"family", "linear"}, {"cap", 10.0}}},
                {"M0", 10.0}, {"L0", 0.5}, {"rho0", {{"c", 0.5}, {"beta", 1.0}}}, {"c0", 1.0}};
    if (name == "abs_stopping")
        return {{"name", name}, {"T", 1.0}, {"sigma", {1.0}}, {"F", {{"family", "zero"}}},
                {"h", {{"family", "abs"}, {"cap", 10.0}}}, {"xi", {{"family", "abs"}, {"cap", 10.0}}},
                {"M0", 10.0}, {"L0", 0.5}, {"rho0", {{"c", 0.5}, {"beta", 1.0}}}, {"c0", 1.0}};
    if (name == "abs_stopping_active")
        return {{"name", name}, {"T", 1.0}, {"sigma", {1.0}}, {"F", {{"family", "constant"}, {"value", -0.5}}},
                {"h", {{"family", "abs"}, {"cap", 10.0}}}, {"xi", {{"family", "abs"}, {"cap", 10.0}}},
                {"M0", 10.0}, {"L0", 0.5}, {"rho0", {{"c", 0.5}, {"beta", 1.0}}}, {"c0", 1.0}};
    if (name == "two_vol_square")
        return {{"name", name}, {"T", 1.0}, {"sigma", {0.5, 1.0}}, {"F", {{"family", "zero"}}},
                {"h", {{"family", "constant"}, {"value", -10.0}}}, {"xi", {{"family", "square"}, {"cap", 100.0}}},
                {"M0", 100.0}, {"L0", 0.5}, {"rho0", {{"c", 10.0}, {"beta", 1.0}}}, {"c0", 0.5}};
    if (name == "two_vol_neg_square")
        return {{"name", name}, {"T", 1.0}, {"sigma", {0.5, 1.0}}, {"F", {{"family", "zero"}}},
                {"h", {{"family", "constant"}, {"value", -200.0}}}, {"xi", {{"family", "neg_square"}, {"cap", 100.0}}},
                {"M0", 200.0}, {"L0", 0.5}, {"rho0", {{"c", 10.0}, {"beta", 1.0}}}, {"c0", 0.5}};
    if (name == "american_put") {
        const json put = {{"family", "put"}, {"strike", 100.0}, {"spot", 100.0}, {"rate", 0.05}, {"vol", 0.2}};
        return {{"name", name}, {"T", 1.0}, {"sigma", {0.2}}, {"F", {{"family", "linear_y"}, {"rate", 0.05}}},
                {"h", put}, {"xi", put}, {"M0", 100.0}, {"L0", 0.05}, {"rho0", {{"c", 50.0}, {"beta", 1.0}}},
                {"c0", 0.2}};
    }
    if (name == "running_max")
        return {{"name", name}, {"T", 1.0}, {"sigma", {1.0}}, {"F", {{"family", "zero"}}},
                {"h", {{"family", "running_max"}, {"cap", 10.0}}}, {"xi", {{"family", "running_max"}, {"cap", 10.0}}},
                {"M0", 10.0}, {"L0", 0.5}, {"rho0", {{"c", 0.5}, {"beta", 1.0}}}, {"c0", 1.0}};
    throw DomainError("unknown instance: " + name);
}

inline ProblemData named_problem(const std::string& name) { return problem_from_json(named_instance(name)); }

}  // namespace ppde
