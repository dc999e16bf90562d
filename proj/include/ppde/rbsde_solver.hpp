#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ppde/errors.hpp"
#include "ppde/model.hpp"
#include "ppde/parallel.hpp"
#include "ppde/path_space.hpp"
#include "ppde/simulate.hpp"

namespace ppde {

enum class SolutionLayout { tree, paths };

struct SolutionMetadata {
    std::string solver;
    std::string basis;
    double penalty = 0.0;
    bool reflected = true;
    std::vector<std::string> warnings;
};

/// Rows are time steps; columns are tree nodes (row i has 2i+1) or paths.
/// dK[i][j] = K_{i+1} - K_i along the track through (i, j), so K_0 = 0.
struct RbsdeSolution {
    double y0 = 0.0;
    double std_error = 0.0;
    SolutionLayout layout = SolutionLayout::tree;
    int d = 1;
    double t0 = 0.0;
    double dt = 0.0;
    std::size_t n_steps = 0;
    double x_root = 0.0;  // tree only
    double dx = 0.0;      // tree only
    std::vector<std::vector<double>> Y, H, Z, dK;
    std::vector<std::vector<int>> control;
    SolutionMetadata meta;

    [[nodiscard]] double node_x(std::size_t i, std::size_t j) const {
        return x_root + (static_cast<double>(j) - static_cast<double>(i)) * dx;
    }
};

struct TreeOptions {
    std::size_t n_steps = 200;
    std::optional<ControlPolicy> policy;  // none: sup over K at every node
    bool reflect = true;
    double penalty = 0.0;
    bool implicit_penalty = false;
    int picard_max = 100;
    std::optional<double> dx;
};

namespace detail {

inline void require_tree_data(const ProblemData& data) {
    if (data.d != 1) throw DomainError("tree solver: d must be 1");
    if (data.dependence != PathDependence::current_value)
        throw DomainError("tree solver: data must depend on the path only through its current value");
    if (data.sigma.empty()) throw DomainError("tree solver: empty control set");
}

/// y = c + dt F(y); contraction for dt L0 < 1.
template <class Fn>
double implicit_step(double c, double dt, Fn&& f, int max_iter) {
    double y = c;
    for (int it = 0; it < max_iter; ++it) {
        const double next = c + dt * f(y);
        if (!std::isfinite(next)) throw NumericError("tree solver: non-finite value");
        if (std::abs(next - y) <= 1e-15 * (1.0 + std::abs(next))) return next;
        y = next;
    }
    return y;
}

/// Terminal values at the n_steps-th layer are supplied; stop_value(i, x) returning a value
/// forces stopping at that node (used for nested evaluations at stopping times).
inline RbsdeSolution tree_backward(const ProblemData& data, double t0, double x_root, std::size_t n_steps, double dt,
                                   double dx, const std::vector<double>& terminal, const TreeOptions& opt,
                                   const std::function<std::optional<double>(std::size_t, double)>& stop_value = {}) {
    RbsdeSolution sol;
    sol.layout = SolutionLayout::tree;
    sol.t0 = t0;
    sol.dt = dt;
    sol.dx = dx;
    sol.n_steps = n_steps;
    sol.x_root = x_root;
    sol.meta.reflected = opt.reflect;
    sol.meta.penalty = opt.penalty;
    sol.Y.resize(n_steps + 1);
    sol.H.resize(n_steps + 1);
    sol.Z.resize(n_steps + 1);
    sol.dK.resize(n_steps + 1);
    sol.control.resize(n_steps + 1);
    const int nk = data.n_controls();
    std::vector<double> pk(static_cast<std::size_t>(nk)), sk(static_cast<std::size_t>(nk));
    for (int k = 0; k < nk; ++k) {
        sk[static_cast<std::size_t>(k)] = data.sigma_scalar(k);
        pk[static_cast<std::size_t>(k)] = sk[static_cast<std::size_t>(k)] * sk[static_cast<std::size_t>(k)] * dt / (2.0 * dx * dx);
        if (pk[static_cast<std::size_t>(k)] > 0.5 + 1e-12) throw ParameterError("tree solver: branch probability above 1/2");
    }
    const double T_end = t0 + dt * static_cast<double>(n_steps);
    auto eval_path = [&](double t, double x) { return point_path(t, x, std::max(dt, 1e-6)); };

    const std::size_t nl = 2 * n_steps + 1;
    if (terminal.size() != nl) throw DomainError("tree solver: terminal layer size mismatch");
    sol.Y[n_steps] = terminal;
    sol.H[n_steps].resize(nl);
    sol.Z[n_steps].assign(nl, 0.0);
    sol.dK[n_steps].assign(nl, 0.0);
    sol.control[n_steps].assign(nl, 0);
    for (std::size_t j = 0; j < nl; ++j) {
        const auto p = eval_path(T_end, sol.node_x(n_steps, j));
        sol.H[n_steps][j] = data.h(PathPoint{T_end, p});
    }

    Vec zv(1);
    for (std::size_t ii = n_steps; ii-- > 0;) {
        const std::size_t n_nodes = 2 * ii + 1;
        const double t = t0 + dt * static_cast<double>(ii);
        auto& Y = sol.Y[ii];
        auto& H = sol.H[ii];
        auto& Z = sol.Z[ii];
        auto& dK = sol.dK[ii];
        auto& ctl = sol.control[ii];
        Y.resize(n_nodes);
        H.resize(n_nodes);
        Z.resize(n_nodes);
        dK.resize(n_nodes);
        ctl.resize(n_nodes);
        const auto& Yn = sol.Y[ii + 1];
        for (std::size_t j = 0; j < n_nodes; ++j) {
            const double x = sol.node_x(ii, j);
            const DiscretePath path = eval_path(t, x);
            const PathPoint pt{t, path};
            const double h = data.h(pt);
            H[j] = h;
            if (stop_value) {
                if (auto v = stop_value(ii, x)) {
                    Y[j] = *v;
                    Z[j] = 0.0;
                    dK[j] = 0.0;
                    ctl[j] = 0;
                    continue;
                }
            }
            const double yd = Yn[j], ym = Yn[j + 1], yu = Yn[j + 2];
            double best = -std::numeric_limits<double>::infinity();
            int best_k = 0;
            double best_z = 0.0;
            auto try_control = [&](int k) {
                const double p = pk[static_cast<std::size_t>(k)];
                const double e = p * yu + (1.0 - 2.0 * p) * ym + p * yd;
                const double z = sk[static_cast<std::size_t>(k)] * (yu - yd) / (2.0 * dx);
                zv(0) = z;
                const double y = implicit_step(e, dt, [&](double yy) { return data.F(pt, yy, zv, k); }, opt.picard_max);
                if (y > best) {
                    best = y;
                    best_k = k;
                    best_z = z;
                }
            };
            if (opt.policy) try_control(opt.policy->at(ii, x - x_root));
            else
                for (int k = 0; k < nk; ++k) try_control(k);
            double cont = best;
            if (opt.penalty > 0.0 && cont < h) {
                if (opt.implicit_penalty) cont = (cont + dt * opt.penalty * h) / (1.0 + dt * opt.penalty);
                else cont += dt * opt.penalty * (h - cont);
            }
            if (opt.reflect) {
                Y[j] = std::max(h, cont);
                dK[j] = std::max(0.0, h - cont);
            } else {
                Y[j] = cont;
                dK[j] = 0.0;
            }
            Z[j] = best_z;
            ctl[j] = best_k;
            if (!std::isfinite(Y[j])) throw NumericError("tree solver: non-finite value");
        }
    }
    sol.y0 = sol.Y[0][0];
    return sol;
}

inline double tree_dx(const ProblemData& data, double dt, const TreeOptions& opt) {
    if (opt.dx) return *opt.dx;
    const double s = data.sigma_max();
    if (!(s > 0.0)) throw ParameterError("tree solver: all volatilities are zero");
    return s * std::sqrt(3.0 * dt);
}

}  // namespace detail

/// Reflected BSDE on a recombining trinomial tree (d = 1); sup over controls unless a policy is given.
inline RbsdeSolution solve_rbsde_tree(const ProblemData& data, const PathPoint& root, const TreeOptions& opt) {
    detail::require_tree_data(data);
    if (opt.n_steps < 1) throw ParameterError("tree solver: n_steps must be >= 1");
    if (root.t >= data.T) throw DomainError("tree solver: root time must be before T");
    const double dt = (data.T - root.t) / static_cast<double>(opt.n_steps);
    const double dx = detail::tree_dx(data, dt, opt);
    const double x0 = state_at_scalar(root);
    std::vector<double> term(2 * opt.n_steps + 1);
    for (std::size_t j = 0; j < term.size(); ++j) {
        const double x = x0 + (static_cast<double>(j) - static_cast<double>(opt.n_steps)) * dx;
        term[j] = data.xi(point_path(data.T, x, std::max(dt, 1e-6)));
    }
    auto sol = detail::tree_backward(data, root.t, x0, opt.n_steps, dt, dx, term, opt);
    sol.meta.solver = opt.policy ? "tree" : "tree_sup";
    if (opt.penalty > 0.0) sol.meta.solver += "_penalized";
    return sol;
}

inline RbsdeSolution solve_rbsde_tree(const ProblemData& data, const PathPoint& root, std::size_t n_steps) {
    TreeOptions o;
    o.n_steps = n_steps;
    return solve_rbsde_tree(data, root, o);
}

/// Unreflected penalized recursion with driver F + m (y - h)^-; refuses dt (L0 + m) > 1.
inline RbsdeSolution solve_penalized(const ProblemData& data, const PathPoint& root, TreeOptions opt, double m) {
    if (m < 0.0) throw ParameterError("solve_penalized: m must be >= 0");
    const double dt = (data.T - root.t) / static_cast<double>(opt.n_steps);
    if (dt * (data.L0 + m) > 1.0 + 1e-12)
        throw ParameterError("solve_penalized: dt (L0 + m) > 1; refine the time grid");
    opt.reflect = false;
    opt.penalty = m;
    opt.implicit_penalty = false;
    auto sol = solve_rbsde_tree(data, root, opt);
    for (auto& row : sol.dK) std::fill(row.begin(), row.end(), 0.0);
    return sol;
}

struct BasisSpec {
    int degree = 2;
    std::optional<bool> extrema;  // default: on unless the data are current-value
    double cond_threshold = 1e8;
    double ridge = 1e-6;
    bool in_the_money = true;  // refit continuation on paths with h above its cross-sectional floor
};

namespace detail {

/// Exponents of all monomials of total degree <= deg in n variables.
inline std::vector<std::vector<int>> monomials(int n, int deg) {
    std::vector<std::vector<int>> out;
    std::vector<int> e(static_cast<std::size_t>(n), 0);
    std::function<void(int, int)> rec = [&](int var, int left) {
        if (var == n) {
            out.push_back(e);
            return;
        }
        for (int p = 0; p <= left; ++p) {
            e[static_cast<std::size_t>(var)] = p;
            rec(var + 1, left - p);
        }
        e[static_cast<std::size_t>(var)] = 0;
    };
    rec(0, deg);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        int sa = 0, sb = 0;
        for (int v : a) sa += v;
        for (int v : b) sb += v;
        return sa < sb;
    });
    return out;
}

struct Regression {
    Mat coef;  // p x n_targets
    bool ridge = false;
    double condition = 1.0;
};

inline Regression regress(const Mat& phi, const Mat& targets, const BasisSpec& spec) {
    const Mat G = phi.transpose() * phi / static_cast<double>(phi.rows());
    const Mat b = phi.transpose() * targets / static_cast<double>(phi.rows());
    const Eigen::SelfAdjointEigenSolver<Mat> es(G);
    const double lmax = es.eigenvalues().maxCoeff();
    const double lmin = std::max(es.eigenvalues().minCoeff(), 0.0);
    Regression r;
    r.condition = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
    Mat A = G;
    if (!(r.condition <= spec.cond_threshold)) {
        r.ridge = true;
        A += Mat::Identity(G.rows(), G.cols()) * spec.ridge * std::max(lmax, 1e-300);
    }
    r.coef = A.ldlt().solve(b);
    return r;
}

}  // namespace detail

/// Backward least-squares regression RBSDE on a fixed-policy bundle.
inline RbsdeSolution solve_rbsde_lsmc(const ProblemData& data, const PathBundle& bundle, const BasisSpec& basis = {},
                                      bool reflect = true, double penalty = 0.0) {
    const std::size_t N = bundle.paths.size();
    const std::size_t n = bundle.n_steps;
    const int d = bundle.dim;
    if (N < 2) throw ParameterError("lsmc: need at least two paths");
    if (penalty > 0.0 && bundle.dt * (data.L0 + penalty) > 1.0 + 1e-12)
        throw ParameterError("lsmc: dt (L0 + m) > 1; refine the time grid");
    const bool use_ext = basis.extrema.value_or(data.dependence != PathDependence::current_value);
    const int n_feat = use_ext ? 3 * d : d;
    const auto expo = detail::monomials(n_feat, basis.degree);
    const auto p_dim = static_cast<Eigen::Index>(expo.size());
    const double dt = bundle.dt;

    RbsdeSolution sol;
    sol.layout = SolutionLayout::paths;
    sol.d = d;
    sol.t0 = bundle.t;
    sol.dt = dt;
    sol.n_steps = n;
    sol.meta.solver = penalty > 0.0 ? "lsmc_penalized" : "lsmc";
    sol.meta.reflected = reflect;
    sol.meta.penalty = penalty;
    sol.meta.basis = "monomials(deg<=" + std::to_string(basis.degree) + (use_ext ? ", x, max, min)" : ", x)");
    sol.Y.assign(n + 1, std::vector<double>(N));
    sol.H.assign(n + 1, std::vector<double>(N));
    sol.Z.assign(n + 1, std::vector<double>(N * static_cast<std::size_t>(d), 0.0));
    sol.dK.assign(n + 1, std::vector<double>(N, 0.0));
    sol.control.assign(n + 1, std::vector<int>(N, 0));

    std::vector<DiscretePath> full(N);
    parallel_for(0, N, [&](std::size_t j) { full[j] = bundle.full_path(j); });
    const std::size_t off = full[0].size() - (n + 1);  // grid index of time t in the full path
    // running extrema per path and step
    std::vector<double> rmax, rmin;
    if (use_ext) {
        rmax.assign(N * (n + 1) * static_cast<std::size_t>(d), 0.0);
        rmin.assign(N * (n + 1) * static_cast<std::size_t>(d), 0.0);
        parallel_for(0, N, [&](std::size_t j) {
            for (int c = 0; c < d; ++c) {
                double hi = 0.0, lo = 0.0;
                for (std::size_t i = 0; i <= off; ++i) {
                    hi = std::max(hi, full[j].value(i, c));
                    lo = std::min(lo, full[j].value(i, c));
                }
                for (std::size_t i = 0; i <= n; ++i) {
                    const double v = full[j].value(off + i, c);
                    hi = std::max(hi, v);
                    lo = std::min(lo, v);
                    rmax[(j * (n + 1) + i) * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] = hi;
                    rmin[(j * (n + 1) + i) * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] = lo;
                }
            }
        });
    }

    std::vector<double> realized(N);
    parallel_for(0, N, [&](std::size_t j) {
        const double tT = data.T;
        realized[j] = data.xi(full[j]);
        sol.Y[n][j] = realized[j];
        sol.H[n][j] = data.h(PathPoint{tT, full[j]});
    });

    int ridge_steps = 0;
    double worst_cond = 1.0;
    Mat phi(static_cast<Eigen::Index>(N), p_dim);
    Mat targ(static_cast<Eigen::Index>(N), 1 + d);
    std::vector<double> raw(static_cast<std::size_t>(n_feat));
    for (std::size_t ii = n; ii-- > 0;) {
        const double t = bundle.t + dt * static_cast<double>(ii);
        for (std::size_t j = 0; j < N; ++j) {
            targ(static_cast<Eigen::Index>(j), 0) = realized[j];
            for (int c = 0; c < d; ++c) targ(static_cast<Eigen::Index>(j), 1 + c) = realized[j] * bundle.noise(j, ii, c) / dt;
        }
        Mat fitted(static_cast<Eigen::Index>(N), 1 + d);
        std::vector<char> hold;  // paths at the barrier floor that keep running after an in-the-money refit
        if (ii == 0) {
            const Eigen::RowVectorXd mean = targ.colwise().mean();
            fitted = mean.replicate(static_cast<Eigen::Index>(N), 1);
        } else {
            // standardized features
            std::vector<double> mu(static_cast<std::size_t>(n_feat), 0.0), sd(static_cast<std::size_t>(n_feat), 0.0);
            auto feature = [&](std::size_t j, int f) {
                const int c = f % d;
                const int kind = f / d;
                if (kind == 0) return full[j].value(off + ii, c);
                const std::size_t idx = (j * (n + 1) + ii) * static_cast<std::size_t>(d) + static_cast<std::size_t>(c);
                return kind == 1 ? rmax[idx] : rmin[idx];
            };
            for (std::size_t j = 0; j < N; ++j)
                for (int f = 0; f < n_feat; ++f) mu[static_cast<std::size_t>(f)] += feature(j, f);
            for (auto& m : mu) m /= static_cast<double>(N);
            for (std::size_t j = 0; j < N; ++j)
                for (int f = 0; f < n_feat; ++f) {
                    const double e = feature(j, f) - mu[static_cast<std::size_t>(f)];
                    sd[static_cast<std::size_t>(f)] += e * e;
                }
            for (auto& s : sd) s = std::sqrt(s / static_cast<double>(N));
            for (std::size_t j = 0; j < N; ++j) {
                for (int f = 0; f < n_feat; ++f) {
                    const double s = sd[static_cast<std::size_t>(f)];
                    raw[static_cast<std::size_t>(f)] = s > 1e-14 ? (feature(j, f) - mu[static_cast<std::size_t>(f)]) / s : 0.0;
                }
                for (Eigen::Index q = 0; q < p_dim; ++q) {
                    double v = 1.0;
                    for (int f = 0; f < n_feat; ++f)
                        for (int e = 0; e < expo[static_cast<std::size_t>(q)][static_cast<std::size_t>(f)]; ++e) v *= raw[static_cast<std::size_t>(f)];
                    phi(static_cast<Eigen::Index>(j), q) = v;
                }
            }
            const auto reg = detail::regress(phi, targ, basis);
            if (reg.ridge) ++ridge_steps;
            worst_cond = std::max(worst_cond, reg.condition);
            fitted = phi * reg.coef;
            if (reflect && basis.in_the_money) {
                std::vector<double> hs(N);
                parallel_for(0, N, [&](std::size_t j) { hs[j] = data.h(PathPoint{t, full[j]}); });
                const double floor = *std::min_element(hs.begin(), hs.end());
                std::vector<Eigen::Index> rows;
                for (std::size_t j = 0; j < N; ++j)
                    if (hs[j] > floor + 1e-12 * (1.0 + std::abs(floor))) rows.push_back(static_cast<Eigen::Index>(j));
                const auto need = static_cast<std::size_t>(std::max<Eigen::Index>(50, 5 * p_dim));
                if (rows.size() >= need && rows.size() < N) {
                    Mat ps(static_cast<Eigen::Index>(rows.size()), p_dim), ts(static_cast<Eigen::Index>(rows.size()), 1);
                    for (std::size_t r = 0; r < rows.size(); ++r) {
                        ps.row(static_cast<Eigen::Index>(r)) = phi.row(rows[r]);
                        ts(static_cast<Eigen::Index>(r), 0) = targ(rows[r], 0);
                    }
                    const auto sub = detail::regress(ps, ts, basis);
                    if (sub.ridge) ++ridge_steps;
                    worst_cond = std::max(worst_cond, sub.condition);
                    hold.assign(N, 1);
                    for (std::size_t r = 0; r < rows.size(); ++r) {
                        fitted(rows[r], 0) = (ps.row(static_cast<Eigen::Index>(r)) * sub.coef)(0, 0);
                        hold[static_cast<std::size_t>(rows[r])] = 0;
                    }
                }
            }
        }
        std::vector<double> next_realized(N);
        parallel_for(0, N, [&](std::size_t j) {
            const PathPoint pt{t, full[j]};
            const double h = data.h(pt);
            const auto J = static_cast<Eigen::Index>(j);
            const double c_hat = fitted(J, 0);
            Vec z(d);
            for (int c = 0; c < d; ++c) z(c) = fitted(J, 1 + c);
            const int k = bundle.policy.at(ii, bundle.paths[j].value(ii));
            const double f = data.F(pt, c_hat, z, k);
            double cont = c_hat + dt * f;
            double pen = 0.0;
            if (penalty > 0.0 && cont < h) {
                pen = dt * penalty * (h - cont);
                cont += pen;
            }
            const double carried = realized[j] + dt * f + pen;
            sol.H[ii][j] = h;
            sol.control[ii][j] = k;
            for (int c = 0; c < d; ++c) sol.Z[ii][j * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] = z(c);
            if (!hold.empty() && hold[j]) cont = std::max(cont, h);
            if (reflect && h > cont) {
                sol.Y[ii][j] = h;
                sol.dK[ii][j] = h - cont;
                next_realized[j] = h;
            } else {
                sol.Y[ii][j] = cont;
                next_realized[j] = carried;
            }
            if (!std::isfinite(sol.Y[ii][j])) throw NumericError("lsmc: non-finite value");
        });
        realized.swap(next_realized);
    }
    sol.y0 = sol.Y[0][0];
    // standard error from antithetic pair averages of the realized root values
    const std::size_t step = bundle.antithetic ? 2 : 1;
    std::vector<double> g;
    for (std::size_t j = 0; j + step <= N; j += step) {
        double s = 0.0;
        for (std::size_t q = 0; q < step; ++q) s += realized[j + q];
        g.push_back(s / static_cast<double>(step));
    }
    if (sol.dK[0][0] > 0.0) sol.std_error = 0.0;
    else if (g.size() > 1) {
        double m = 0.0, v = 0.0;
        for (double x : g) m += x;
        m /= static_cast<double>(g.size());
        for (double x : g) v += (x - m) * (x - m);
        sol.std_error = std::sqrt(v / static_cast<double>(g.size() - 1) / static_cast<double>(g.size()));
    }
    if (ridge_steps > 0)
        sol.meta.warnings.push_back("ill-conditioned regression at " + std::to_string(ridge_steps) +
                                    " steps (worst condition " + std::to_string(worst_cond) + "); ridge fallback used");
    return sol;
}

struct ValueResult {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t family_size = 1;
    std::string method;
    std::vector<int> best_policy;  // step-wise indices for the d >= 2 family
};

struct ValueOptions {
    std::size_t n_steps = 200;
    std::size_t n_paths = 20000;
    std::uint64_t seed = 1;
    BasisSpec basis{};
};

/// u0(t, omega): sup-over-control tree for d = 1; best policy of a constant/one-switch family by LSMC otherwise.
inline ValueResult value_functional(const ProblemData& data, const PathPoint& p, const ValueOptions& opt = {}) {
    ValueResult r;
    if (data.d == 1 && data.dependence == PathDependence::current_value) {
        const auto sol = solve_rbsde_tree(data, p, opt.n_steps);
        r.value = sol.y0;
        r.method = "tree_sup";
        r.family_size = static_cast<std::size_t>(data.n_controls());
        return r;
    }
    std::vector<ControlPolicy> family;
    const int nk = data.n_controls();
    for (int k = 0; k < nk; ++k) family.push_back(ControlPolicy::constant(k, opt.n_steps));
    for (int a = 0; a < nk; ++a)
        for (int b = 0; b < nk; ++b)
            if (a != b) family.push_back(ControlPolicy::one_switch(a, b, opt.n_steps / 2, opt.n_steps));
    r.value = -std::numeric_limits<double>::infinity();
    r.family_size = family.size();
    r.method = "lsmc_policy_family";
    for (const auto& pol : family) {
        const auto b = euler_bundle(data, p, pol, opt.n_steps, opt.n_paths, opt.seed);
        const auto sol = solve_rbsde_lsmc(data, b, opt.basis);
        if (sol.y0 > r.value) {
            r.value = sol.y0;
            r.std_error = sol.std_error;
            r.best_policy = pol.per_step;
        }
    }
    return r;
}

struct DppOptions {
    std::size_t n_steps = 4;
    std::size_t inner_refine = 1;  // inner re-rooted solves use n_remaining * inner_refine steps
    std::optional<double> delta;   // stopping-time variant tau = ch_delta ^ t1
};

struct DppReport {
    double direct = 0.0;
    double nested = 0.0;
    double residual = 0.0;
    std::size_t inner_solves = 0;
};

/// |u0(t, w) - Y_t(t1 or tau, u0(., w (x) B))| with inner values from re-rooted tree solves (d = 1).
inline DppReport dpp_residual(const ProblemData& data, const PathPoint& p, double t1, const DppOptions& opt = {}) {
    detail::require_tree_data(data);
    if (!(t1 > p.t) || t1 > data.T + 1e-12) throw DomainError("dpp_residual: need t < t1 <= T");
    DppReport rep;
    TreeOptions to;
    to.n_steps = opt.n_steps;
    const auto direct = solve_rbsde_tree(data, p, to);
    rep.direct = direct.y0;
    const double dt = direct.dt, dx = direct.dx;
    const auto n1 = static_cast<std::size_t>(std::llround((t1 - p.t) / dt));
    if (n1 < 1 || n1 > opt.n_steps || std::abs(p.t + dt * static_cast<double>(n1) - t1) > 1e-9 * std::max(1.0, t1))
        throw DomainError("dpp_residual: t1 is not on the tree grid");
    const double x0 = direct.x_root;
    auto inner = [&](std::size_t i, double x) {
        ++rep.inner_solves;
        const double t = p.t + dt * static_cast<double>(i);
        if (i == opt.n_steps || t >= data.T - 1e-12) return data.xi(point_path(data.T, x, std::max(dt, 1e-6)));
        TreeOptions io;
        io.n_steps = (opt.n_steps - i) * opt.inner_refine;
        const auto path = point_path(t, x, std::max(dt, 1e-6));
        return solve_rbsde_tree(data, PathPoint{t, path}, io).y0;
    };
    std::vector<double> term(2 * n1 + 1);
    for (std::size_t j = 0; j < term.size(); ++j)
        term[j] = inner(n1, x0 + (static_cast<double>(j) - static_cast<double>(n1)) * dx);
    std::function<std::optional<double>(std::size_t, double)> stop;
    if (opt.delta) {
        const double delta = *opt.delta;
        const double cap = std::min({p.t + delta, data.T, t1});
        stop = [&, delta, cap](std::size_t i, double x) -> std::optional<double> {
            if (i == 0) return std::nullopt;
            const double t = p.t + dt * static_cast<double>(i);
            if (std::abs(x - x0) >= delta - 1e-12 || t >= cap - 1e-12) return inner(i, x);
            return std::nullopt;
        };
    }
    const auto nested = detail::tree_backward(data, p.t, x0, n1, dt, dx, term, to, stop);
    rep.nested = nested.y0;
    rep.residual = std::abs(rep.direct - rep.nested);
    return rep;
}

struct SkorokhodReport {
    double max_flatoff_defect = 0.0;  // max over tracks of sum_i (Y_i - h_i) dK_i
    double min_dK = 0.0;
    double min_reflection_margin = 0.0;  // min (Y - h)
    double total_K = 0.0;
    double off_barrier_fraction = 0.0;  // K mass at nodes with Y - h > tol
    std::optional<double> off_knot_fraction;
    bool k_nondecreasing = true;
};

/// Flat-off, reflection and K-localization diagnostics. knot_steps[j] lists, for track j,
/// the steps that are cascade knots (path layout only).
inline SkorokhodReport skorokhod_report(const RbsdeSolution& sol,
                                        const std::optional<std::vector<std::vector<std::size_t>>>& knot_steps = std::nullopt,
                                        double tol = 1e-8) {
    SkorokhodReport r;
    r.min_dK = std::numeric_limits<double>::infinity();
    r.min_reflection_margin = std::numeric_limits<double>::infinity();
    double off_barrier = 0.0;
    for (std::size_t i = 0; i < sol.Y.size(); ++i)
        for (std::size_t j = 0; j < sol.Y[i].size(); ++j) {
            const double dk = sol.dK[i][j];
            r.min_dK = std::min(r.min_dK, dk);
            if (!(dk >= 0.0)) r.k_nondecreasing = false;
            const double gap = sol.Y[i][j] - sol.H[i][j];
            if (sol.meta.reflected) r.min_reflection_margin = std::min(r.min_reflection_margin, gap);
            r.total_K += dk;
            if (gap > tol) off_barrier += dk;
        }
    if (!sol.meta.reflected) r.min_reflection_margin = 0.0;
    r.off_barrier_fraction = r.total_K > 0.0 ? off_barrier / r.total_K : 0.0;
    if (sol.layout == SolutionLayout::tree) {
        // max over tree paths of the accumulated defect, by forward-looking DP
        std::vector<double> best(sol.Y.back().size());
        const std::size_t n = sol.n_steps;
        for (std::size_t j = 0; j < best.size(); ++j) best[j] = (sol.Y[n][j] - sol.H[n][j]) * sol.dK[n][j];
        for (std::size_t ii = n; ii-- > 0;) {
            std::vector<double> cur(2 * ii + 1);
            for (std::size_t j = 0; j < cur.size(); ++j)
                cur[j] = (sol.Y[ii][j] - sol.H[ii][j]) * sol.dK[ii][j] + std::max({best[j], best[j + 1], best[j + 2]});
            best.swap(cur);
        }
        r.max_flatoff_defect = best[0];
    } else {
        const std::size_t N = sol.Y.front().size();
        double off_knot = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < sol.Y.size(); ++i) s += (sol.Y[i][j] - sol.H[i][j]) * sol.dK[i][j];
            r.max_flatoff_defect = std::max(r.max_flatoff_defect, s);
            if (knot_steps) {
                const auto& ks = (*knot_steps)[j];
                for (std::size_t i = 0; i < sol.Y.size(); ++i)
                    if (sol.dK[i][j] != 0.0 && std::find(ks.begin(), ks.end(), i) == ks.end()) off_knot += sol.dK[i][j];
            }
        }
        if (knot_steps) r.off_knot_fraction = r.total_K > 0.0 ? off_knot / r.total_K : 0.0;
    }
    if (!std::isfinite(r.min_dK)) r.min_dK = 0.0;
    if (!std::isfinite(r.min_reflection_margin)) r.min_reflection_margin = 0.0;
    return r;
}

/// CSV: step, time, mean Y, mean K, fraction of tracks on the barrier.
inline void write_csv(std::ostream& os, const RbsdeSolution& sol) {
    os << "step,time,mean_Y,mean_K,barrier_active_fraction\n" << std::setprecision(12);
    std::vector<double> K(sol.Y.empty() ? 0 : sol.Y.back().size(), 0.0);
    double kmean = 0.0;
    for (std::size_t i = 0; i < sol.Y.size(); ++i) {
        double my = 0.0, act = 0.0;
        for (std::size_t j = 0; j < sol.Y[i].size(); ++j) {
            my += sol.Y[i][j];
            if (sol.Y[i][j] - sol.H[i][j] <= 1e-12) act += 1.0;
        }
        const auto m = static_cast<double>(sol.Y[i].size());
        os << i << ',' << sol.t0 + sol.dt * static_cast<double>(i) << ',' << my / m << ',' << kmean << ',' << act / m << '\n';
        double dk = 0.0;
        for (double v : sol.dK[i]) dk += v;
        kmean += dk / m;
    }
}

struct ModulusReport {
    std::vector<double> distance;  // bin upper edges
    std::vector<double> max_gap;   // max |u(t,w) - u(t,w')| per bin
    std::vector<double> majorant;  // running max of max_gap: a nondecreasing modulus
    double fitted_c = 0.0;         // smallest c with gap <= c (r^beta + r) on all pairs
    bool dominated = true;
    bool trend_ok = true;  // smallest-distance bin <= largest-distance bin
    double bound = 0.0;
    double max_abs_value = 0.0;
};

/// Empirical omega-modulus of u0 at time t from pairs of probe paths, plus the |u0| bound check.
inline ModulusReport empirical_modulus(const ProblemData& data, double t, std::size_t n_pairs, std::size_t n_steps,
                                       std::uint64_t seed, std::size_t n_bins = 6) {
    ModulusReport rep;
    rep.bound = value_bound(data);
    const Philox4x32 gen(seed);
    const int grid = 50;
    const double pdt = data.T / grid;
    const auto kt = static_cast<std::size_t>(std::llround(t / pdt));
    std::vector<std::pair<double, double>> pts;
    auto value_at = [&](const DiscretePath& w) {
        const double tt = pdt * static_cast<double>(kt);
        if (tt <= 0.0) return solve_rbsde_tree(data, PathPoint{0.0, w}, n_steps).y0;
        return solve_rbsde_tree(data, PathPoint{tt, w}, n_steps).y0;
    };
    for (std::size_t q = 0; q < n_pairs; ++q) {
        const DiscretePath a = probe_path(data, gen, 2 * q, grid, 1.0);
        // perturbation of a of random size
        const double eps = std::pow(10.0, -3.0 + 3.0 * gen.uniforms(q, 7, 7)[0]);
        const DiscretePath pert = probe_path(data, gen, 2 * q + 1, grid, 1.0);
        std::vector<double> v(a.raw());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += eps * pert.raw()[i];
        const DiscretePath b(0.0, pdt, data.d, v);
        const double tt = pdt * static_cast<double>(kt);
        const double r = dist_dinfty(PathPoint{tt, a}, PathPoint{tt, b});
        const double ua = value_at(a), ub = value_at(b);
        rep.max_abs_value = std::max({rep.max_abs_value, std::abs(ua), std::abs(ub)});
        pts.emplace_back(r, std::abs(ua - ub));
    }
    if (pts.empty()) return rep;
    double rmax = 0.0;
    for (auto& pr : pts) rmax = std::max(rmax, pr.first);
    double rmin = rmax;
    for (auto& pr : pts) rmin = std::min(rmin, std::max(pr.first, 1e-12));
    const double lr0 = std::log(rmin), lr1 = std::log(rmax) + 1e-12;
    rep.distance.resize(n_bins);
    rep.max_gap.assign(n_bins, 0.0);
    for (std::size_t b = 0; b < n_bins; ++b)
        rep.distance[b] = std::exp(lr0 + (lr1 - lr0) * static_cast<double>(b + 1) / static_cast<double>(n_bins));
    for (auto& pr : pts) {
        std::size_t b = 0;
        while (b + 1 < n_bins && pr.first > rep.distance[b]) ++b;
        rep.max_gap[b] = std::max(rep.max_gap[b], pr.second);
        const double den = std::pow(std::max(pr.first, 1e-300), data.rho0.beta) + pr.first;
        rep.fitted_c = std::max(rep.fitted_c, pr.second / den);
    }
    rep.majorant = rep.max_gap;
    for (std::size_t b = 1; b < n_bins; ++b) rep.majorant[b] = std::max(rep.majorant[b], rep.majorant[b - 1]);
    for (auto& pr : pts) {
        std::size_t b = 0;
        while (b + 1 < n_bins && pr.first > rep.distance[b]) ++b;
        if (pr.second > rep.majorant[b] + 1e-15) rep.dominated = false;
    }
    rep.trend_ok = rep.max_gap.front() <= rep.max_gap.back() + 1e-12;
    return rep;
}

}  // namespace ppde
