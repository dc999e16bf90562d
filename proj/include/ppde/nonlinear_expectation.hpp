#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "ppde/errors.hpp"
#include "ppde/lattice.hpp"
#include "ppde/model.hpp"
#include "ppde/parallel.hpp"

namespace ppde {

/// X(i, x): value of an adapted process at step i and lattice displacement x.
using LatticeProcess = std::function<double(std::size_t, double)>;
/// Forced stop at (i, x) for i >= 1.
using StopRule = std::function<bool(std::size_t, double)>;

namespace detail {

/// One backward sweep; stop_allowed adds the max/min with the reward at every node.
struct LatticeDp {
    std::vector<std::vector<double>> value, reward, continuation;
    std::vector<std::vector<int>> action;
    std::vector<std::vector<char>> forced;
};

inline LatticeDp lattice_dp(const Lattice& lat, const LatticeProcess& X, bool upper, bool stop_allowed,
                            const StopRule& forced, std::optional<std::size_t> cap) {
    check_lattice(lat);
    const std::size_t n = lat.n_steps;
    LatticeDp dp;
    dp.value.resize(n + 1);
    dp.reward.resize(n + 1);
    dp.continuation.resize(n + 1);
    dp.action.resize(n + 1);
    dp.forced.resize(n + 1);
    std::vector<Stencil> st;
    for (const auto& a : lat.actions) st.push_back(stencil(lat, a));
    for (std::size_t ii = n + 1; ii-- > 0;) {
        const std::size_t m = 2 * ii + 1;
        auto& V = dp.value[ii];
        auto& R = dp.reward[ii];
        auto& C = dp.continuation[ii];
        auto& A = dp.action[ii];
        auto& Fo = dp.forced[ii];
        V.resize(m);
        R.resize(m);
        C.assign(m, std::numeric_limits<double>::quiet_NaN());
        A.assign(m, -1);
        Fo.assign(m, 0);
        const bool last = ii == n || (cap && ii >= *cap);
        parallel_for(0, m, [&](std::size_t j) {
            const double x = lat.x(ii, j);
            R[j] = X(ii, x);
            if (!std::isfinite(R[j])) throw NumericError("lattice: non-finite reward");
            if (last || (ii > 0 && forced && forced(ii, x))) {
                V[j] = R[j];
                Fo[j] = 1;
                return;
            }
            const auto& Vn = dp.value[ii + 1];
            double best = upper ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
            int arg = 0;
            for (std::size_t k = 0; k < st.size(); ++k) {
                double e = 0.0;
                e += st[k].pd * Vn[j];
                e += st[k].pm * Vn[j + 1];
                e += st[k].pu * Vn[j + 2];
                if (upper ? e > best : e < best) {
                    best = e;
                    arg = static_cast<int>(k);
                }
            }
            C[j] = best;
            A[j] = arg;
            V[j] = stop_allowed ? (upper ? std::max(best, R[j]) : std::min(best, R[j])) : best;
        });
    }
    return dp;
}

}  // namespace detail

/// sup over lattice measures of E[xi(X_T)].
inline double upper_expectation(const Lattice& lat, const std::function<double(double)>& xi) {
    const std::size_t n = lat.n_steps;
    return detail::lattice_dp(lat, [&](std::size_t i, double x) { return i == n ? xi(x) : 0.0; }, true, false, {}, {})
        .value[0][0];
}

/// inf over lattice measures, computed as -upper(-xi).
inline double lower_expectation(const Lattice& lat, const std::function<double(double)>& xi) {
    return -upper_expectation(lat, [&](double x) { return -xi(x); });
}

/// Expectation of X at the first forced-stop node (or the last step), sup or inf over measures.
inline double stopped_expectation(const Lattice& lat, const LatticeProcess& X, const StopRule& forced, bool upper) {
    return detail::lattice_dp(lat, X, upper, false, forced, {}).value[0][0];
}

struct SnellResult {
    double value = 0.0;
    std::vector<std::vector<double>> envelope;      // Y_i(x)
    std::vector<std::vector<double>> reward;        // X_i(x)
    std::vector<std::vector<double>> continuation;  // max_a E[Y_{i+1}]; NaN where stopping is forced
    std::vector<std::vector<char>> stop;            // tau* field: Y == X
    std::vector<std::vector<int>> action;
};

/// Y = max(X, max_a E^a[Y_next]); optional forced stops and a step cap.
inline SnellResult snell_upper(const Lattice& lat, const LatticeProcess& X, const StopRule& forced = {},
                               std::optional<std::size_t> cap = std::nullopt) {
    auto dp = detail::lattice_dp(lat, X, true, true, forced, cap);
    SnellResult r;
    r.value = dp.value[0][0];
    r.stop.resize(dp.value.size());
    for (std::size_t i = 0; i < dp.value.size(); ++i) {
        r.stop[i].resize(dp.value[i].size());
        for (std::size_t j = 0; j < dp.value[i].size(); ++j) r.stop[i][j] = dp.value[i][j] == dp.reward[i][j] ? 1 : 0;
    }
    r.envelope = std::move(dp.value);
    r.reward = std::move(dp.reward);
    r.continuation = std::move(dp.continuation);
    r.action = std::move(dp.action);
    return r;
}

struct SnellCheck {
    double dominance = 0.0;             // min (Y - X), >= 0
    double supermartingale = 0.0;       // max (max_a E[Y_next] - Y), <= 0
    double martingale_to_tau = 0.0;     // max |Y - max_a E[Y_next]| over nodes with Y > X
    std::size_t nodes = 0;
};

/// One-step supermartingale and martingale-before-tau* checks, recomputed from the envelope.
inline SnellCheck snell_check(const Lattice& lat, const SnellResult& r) {
    SnellCheck c;
    c.dominance = std::numeric_limits<double>::infinity();
    std::vector<Stencil> st;
    for (const auto& a : lat.actions) st.push_back(stencil(lat, a));
    for (std::size_t i = 0; i < r.envelope.size(); ++i)
        for (std::size_t j = 0; j < r.envelope[i].size(); ++j) {
            ++c.nodes;
            const double Y = r.envelope[i][j];
            c.dominance = std::min(c.dominance, Y - r.reward[i][j]);
            if (std::isnan(r.continuation[i][j])) continue;
            const auto& Yn = r.envelope[i + 1];
            double best = -std::numeric_limits<double>::infinity();
            for (const auto& s : st) best = std::max(best, s.pd * Yn[j] + s.pm * Yn[j + 1] + s.pu * Yn[j + 2]);
            c.supermartingale = std::max(c.supermartingale, best - Y);
            if (!r.stop[i][j]) c.martingale_to_tau = std::max(c.martingale_to_tau, std::abs(Y - best));
        }
    return c;
}

/// Step index of the cap (t + delta) ^ T on a lattice started at 0 with horizon n dt.
inline std::size_t hitting_cap_step(const Lattice& lat, double delta) {
    const double cap = std::min(delta, lat.time(lat.n_steps));
    return std::min(lat.n_steps, static_cast<std::size_t>(std::ceil(cap / lat.dt - 1e-9)));
}

/// Lower expectation of ch_delta: first step with |x| >= delta, capped at delta ^ T.
inline double positive_hitting_check(const Lattice& lat, double delta) {
    if (!(delta > 0.0)) throw DomainError("positive_hitting_check: delta must be positive");
    const std::size_t cap = hitting_cap_step(lat, delta);
    const double lvl = delta - 1e-12 * std::max(1.0, delta);
    return detail::lattice_dp(lat, [&](std::size_t i, double) { return lat.time(i); }, false, false,
                              [&](std::size_t, double x) { return std::abs(x) >= lvl; }, cap)
        .value[0][0];
}

struct MembershipOptions {
    std::size_t n_steps = 20;
    double T = 1.0;
    double c0 = 1.0;
    double x0 = 0.0;     // current value of the path at t
    bool lower = true;   // true: underline A^L (subsolution side); false: overline A^L
    double tol = 1e-9;
};

struct MembershipReport {
    double margin = 0.0;  // >= -tol means phi is in the class at lattice resolution
    bool member = false;
    std::size_t n_steps = 0;
    double horizon = 0.0;
};

/// Lower side: min over tau of E_lower[(phi - u)_{tau ^ ch_delta}]. Upper side: -max over tau of E_upper[...].
/// u(i, x) is given on the lattice started at t with displacement x from x0.
inline MembershipReport test_membership(const LatticeProcess& u, const TestFunctional& phi, double t, double delta,
                                        double L, const MembershipOptions& opt = {}) {
    if (!(delta > 0.0)) throw DomainError("test_membership: delta must be positive");
    const double horizon = std::min(delta, opt.T - t);
    if (!(horizon > 0.0)) throw DomainError("test_membership: t must be before T");
    const Lattice lat = make_lattice(horizon, opt.n_steps, L, opt.c0);
    auto diff = [&](std::size_t i, double x) { return phi.value(t + lat.time(i), opt.x0 + x) - u(i, x); };
    if (std::abs(diff(0, 0.0)) > opt.tol) throw DomainError("test_membership: phi and u are not aligned at (t, omega)");
    const double lvl = delta - 1e-12 * std::max(1.0, delta);
    const StopRule exit_ball = [&](std::size_t, double x) { return std::abs(x) >= lvl; };
    MembershipReport rep;
    rep.n_steps = opt.n_steps;
    rep.horizon = horizon;
    if (opt.lower) rep.margin = -snell_upper(lat, [&](std::size_t i, double x) { return -diff(i, x); }, exit_ball).value;
    else rep.margin = -snell_upper(lat, diff, exit_ball).value;
    rep.member = rep.margin >= -opt.tol;
    return rep;
}

/// Upper expectation of xi(X_T) under lattice refinement; reported, not asserted.
inline std::vector<std::pair<std::size_t, double>> upper_expectation_refinement(const std::function<double(double)>& xi,
                                                                                double T, double L, double c0,
                                                                                const std::vector<std::size_t>& steps) {
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t n : steps) out.emplace_back(n, upper_expectation(make_lattice(T, n, L, c0), xi));
    return out;
}

/// CSV: step, time, node, x, envelope, reward, stop.
inline void write_csv(std::ostream& os, const Lattice& lat, const SnellResult& r) {
    os << "step,time,node,x,envelope,reward,stop\n" << std::setprecision(17);
    for (std::size_t i = 0; i < r.envelope.size(); ++i)
        for (std::size_t j = 0; j < r.envelope[i].size(); ++j)
            os << i << ',' << lat.time(i) << ',' << j << ',' << lat.x(i, j) << ',' << r.envelope[i][j] << ','
               << r.reward[i][j] << ',' << static_cast<int>(r.stop[i][j]) << '\n';
}

}  // namespace ppde
