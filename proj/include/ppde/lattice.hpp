#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ppde/errors.hpp"

namespace ppde {

/// Drift a and volatility b of one lattice action.
struct Action {
    double a = 0.0;
    double b = 0.0;
};

/// Recombining trinomial lattice started at the origin; node j of step i sits at (j - i) dx.
struct Lattice {
    std::size_t n_steps = 0;
    double dt = 0.0;
    double dx = 0.0;
    double L = 0.0;
    std::vector<Action> actions;

    [[nodiscard]] double x(std::size_t i, std::size_t j) const {
        return (static_cast<double>(j) - static_cast<double>(i)) * dx;
    }
    [[nodiscard]] double time(std::size_t i) const { return dt * static_cast<double>(i); }
};

/// Upwind stencil (p_down, p_mid, p_up) of an action.
struct Stencil {
    double pd, pm, pu;
};

inline Stencil stencil(const Lattice& lat, const Action& act) {
    const double diff = act.b * act.b * lat.dt / (2.0 * lat.dx * lat.dx);
    const double up = diff + std::max(act.a, 0.0) * lat.dt / lat.dx;
    const double dn = diff + std::max(-act.a, 0.0) * lat.dt / lat.dx;
    return {dn, 1.0 - up - dn, up};
}

/// Throws unless every action respects |a| <= L, b^2/2 <= L and the stencil is a probability.
inline void check_lattice(const Lattice& lat) {
    if (lat.n_steps < 1) throw ParameterError("lattice: n_steps must be >= 1");
    if (!(lat.dt > 0.0) || !(lat.dx > 0.0)) throw ParameterError("lattice: dt and dx must be positive");
    if (lat.actions.empty()) throw ParameterError("lattice: empty action set");
    const double tol = 1e-12;
    for (const auto& act : lat.actions) {
        if (std::abs(act.a) > lat.L + tol || 0.5 * act.b * act.b > lat.L + tol)
            throw ParameterError("lattice: action outside the bounds |a| <= L, b^2/2 <= L");
        const double cfl = act.b * act.b * lat.dt / (lat.dx * lat.dx) + std::abs(act.a) * lat.dt / lat.dx;
        if (cfl > 1.0 + tol) throw ParameterError("lattice: CFL violated (b^2 dt/dx^2 + |a| dt/dx > 1)");
    }
}

/// Smallest dx meeting the CFL bound for the action (a, b).
inline double cfl_dx(double a, double b, double dt) {
    const double aa = std::abs(a) * dt;
    return 0.5 * (aa + std::sqrt(aa * aa + 4.0 * b * b * dt));
}

/// Default action grid: a in {-L, 0, L}, b in {c0, sqrt(2L)}; dx from the CFL bound unless given.
inline Lattice make_lattice(double T, std::size_t n_steps, double L, double c0, double dx = 0.0) {
    if (!(L > 0.0)) throw ParameterError("lattice: L must be positive");
    if (n_steps < 1) throw ParameterError("lattice: n_steps must be >= 1");
    Lattice lat;
    lat.n_steps = n_steps;
    lat.dt = T / static_cast<double>(n_steps);
    lat.L = L;
    const double bmax = std::sqrt(2.0 * L);
    const double blo = std::min(c0, bmax);
    for (double a : {-L, 0.0, L}) {
        lat.actions.push_back({a, blo});
        if (bmax > blo) lat.actions.push_back({a, bmax});
    }
    lat.dx = dx > 0.0 ? dx : cfl_dx(L, bmax, lat.dt);
    check_lattice(lat);
    return lat;
}

}  // namespace ppde
