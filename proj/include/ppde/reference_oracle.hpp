#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "ppde/errors.hpp"
#include "ppde/lattice.hpp"

namespace ppde::oracle {

/// d = 1 Markovian obstacle problem: dX = sigma(k) dB, discount rate, barrier h(t, x), terminal xi(x),
/// optional driver f(t, x, y) added to the rate term.
struct MarkovianSpec {
    std::vector<double> sigma{1.0};
    double rate = 0.0;
    double T = 1.0;
    std::function<double(double, double)> barrier;
    std::function<double(double)> terminal;
    std::function<double(double, double, double)> driver;
};

/// Recombining binomial tree x +- sigma sqrt(dt), p = 1/2, continuation discounted by exp(-r dt).
inline double binomial_american(const MarkovianSpec& spec, std::size_t n_steps) {
    if (spec.sigma.size() != 1) throw DomainError("binomial_american: single control only");
    if (n_steps < 1) throw ParameterError("binomial_american: n_steps must be >= 1");
    const double dt = spec.T / static_cast<double>(n_steps);
    const double s = spec.sigma[0] * std::sqrt(dt);
    const double disc = std::exp(-spec.rate * dt);
    std::vector<double> v(n_steps + 1);
    for (std::size_t j = 0; j <= n_steps; ++j)
        v[j] = spec.terminal((2.0 * static_cast<double>(j) - static_cast<double>(n_steps)) * s);
    for (std::size_t i = n_steps; i-- > 0;) {
        const double t = dt * static_cast<double>(i);
        for (std::size_t j = 0; j <= i; ++j) {
            const double x = (2.0 * static_cast<double>(j) - static_cast<double>(i)) * s;
            double c = disc * 0.5 * (v[j] + v[j + 1]);
            if (spec.driver) c += dt * spec.driver(t, x, c);
            v[j] = spec.barrier ? std::max(spec.barrier(t, x), c) : c;
        }
    }
    return v[0];
}

struct FdMesh {
    std::size_t nx = 400;  // intervals across [-width, width]; made even
    std::size_t nt = 400;
    double width_sd = 8.0;  // half-width in units of max sigma sqrt(T)
    double tol = 1e-10;
    std::size_t max_iter = 10000;
    double omega = 1.3;
};

struct FdSolution {
    std::vector<double> x;
    std::vector<double> u;  // values at t = 0
    double root = 0.0;
    std::size_t max_psor_iter = 0;
};

/// Implicit Euler with projected SOR for min{-u_t - max_k [sigma_k^2/2 u_xx] - f + r u, u - h} = 0.
inline FdSolution fd_variational_inequality(const MarkovianSpec& spec, const FdMesh& mesh) {
    if (spec.sigma.empty()) throw DomainError("fd_variational_inequality: empty control set");
    const std::size_t nx = mesh.nx + (mesh.nx % 2);
    double smax = 0.0;
    for (double s : spec.sigma) smax = std::max(smax, std::abs(s));
    const double W = mesh.width_sd * smax * std::sqrt(spec.T);
    const double dx = 2.0 * W / static_cast<double>(nx);
    const double dt = spec.T / static_cast<double>(mesh.nt);
    FdSolution out;
    out.x.resize(nx + 1);
    for (std::size_t j = 0; j <= nx; ++j) out.x[j] = -W + dx * static_cast<double>(j);
    std::vector<double> u(nx + 1), prev(nx + 1), obst(nx + 1);
    for (std::size_t j = 0; j <= nx; ++j) u[j] = spec.terminal(out.x[j]);
    auto h = [&](double t, double x) { return spec.barrier ? spec.barrier(t, x) : -std::numeric_limits<double>::infinity(); };
    for (std::size_t n = mesh.nt; n-- > 0;) {
        const double t = dt * static_cast<double>(n);
        prev = u;
        for (std::size_t j = 0; j <= nx; ++j) obst[j] = h(t, out.x[j]);
        const double tau = spec.T - t;
        for (std::size_t j : {std::size_t{0}, nx})
            u[j] = std::max(obst[j], std::exp(-spec.rate * tau) * spec.terminal(out.x[j]));
        std::vector<double> rhs(nx + 1);
        for (std::size_t j = 1; j < nx; ++j) rhs[j] = prev[j] / dt + (spec.driver ? spec.driver(t, out.x[j], prev[j]) : 0.0);
        std::size_t it = 0;
        for (;; ++it) {
            if (it >= mesh.max_iter) throw NumericError("fd_variational_inequality: PSOR did not converge");
            double change = 0.0;
            for (std::size_t j = 1; j < nx; ++j) {
                double cand = -std::numeric_limits<double>::infinity();
                for (double s : spec.sigma) {
                    const double a = 0.5 * s * s / (dx * dx);
                    cand = std::max(cand, (rhs[j] + a * (u[j - 1] + u[j + 1])) / (1.0 / dt + 2.0 * a + spec.rate));
                }
                const double w = spec.sigma.size() == 1 ? mesh.omega : 1.0;
                const double nv = std::max(obst[j], u[j] + w * (cand - u[j]));
                change = std::max(change, std::abs(nv - u[j]));
                u[j] = nv;
            }
            if (change <= mesh.tol * (1.0 + std::abs(u[nx / 2]))) break;
        }
        out.max_psor_iter = std::max(out.max_psor_iter, it + 1);
    }
    out.u = u;
    out.root = u[nx / 2];
    return out;
}

namespace detail {

inline void check_budget(const Lattice& lat) {
    if (lat.n_steps > 5) throw BudgetError("brute force: more than 5 steps");
    if (lat.actions.size() > 3) throw BudgetError("brute force: more than 3 actions");
    if (lat.actions.empty()) throw DomainError("brute force: empty action set");
}

inline void probs(const Lattice& lat, const Action& a, double& pd, double& pm, double& pu) {
    const double q = a.b * a.b * lat.dt / (2.0 * lat.dx * lat.dx);
    pu = q + (a.a > 0.0 ? a.a : 0.0) * lat.dt / lat.dx;
    pd = q + (a.a < 0.0 ? -a.a : 0.0) * lat.dt / lat.dx;
    pm = 1.0 - pu - pd;
}

/// Recursion over full move histories (no recombination).
inline double history_value(const Lattice& lat, std::vector<int>& moves, bool maximize, bool allow_stop,
                            const std::function<double(std::size_t, double)>& X,
                            const std::function<bool(std::size_t, double)>& forced) {
    const std::size_t i = moves.size();
    double x = 0.0;
    for (int m : moves) x += m * lat.dx;
    const double reward = X(i, x);
    if (i == lat.n_steps || (forced && i > 0 && forced(i, x))) return reward;
    double best = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    for (const auto& act : lat.actions) {
        double pd, pm, pu;
        probs(lat, act, pd, pm, pu);
        double e = 0.0;
        const double p[3] = {pd, pm, pu};
        for (int m = -1; m <= 1; ++m) {
            moves.push_back(m);
            e += p[m + 1] * history_value(lat, moves, maximize, allow_stop, X, forced);
            moves.pop_back();
        }
        best = maximize ? std::max(best, e) : std::min(best, e);
    }
    if (allow_stop) best = maximize ? std::max(best, reward) : std::min(best, reward);
    return best;
}

}  // namespace detail

/// sup over stopping rules and adapted action choices of E[X_tau], by enumeration of all histories.
/// forced(i, x) stops the history at that node.
inline double brute_force_snell(const Lattice& lat, const std::function<double(std::size_t, double)>& X,
                                const std::function<bool(std::size_t, double)>& forced = {}) {
    detail::check_budget(lat);
    std::vector<int> moves;
    return detail::history_value(lat, moves, true, true, X, forced);
}

/// sup (or inf) over adapted action choices of E[X at the terminal or forced-stop node].
inline double brute_force_expectation(const Lattice& lat, const std::function<double(std::size_t, double)>& X,
                                      bool upper = true, const std::function<bool(std::size_t, double)>& forced = {}) {
    detail::check_budget(lat);
    std::vector<int> moves;
    return detail::history_value(lat, moves, upper, false, X, forced);
}

}  // namespace ppde::oracle
