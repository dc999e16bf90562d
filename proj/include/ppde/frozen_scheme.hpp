#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ppde/errors.hpp"
#include "ppde/lattice.hpp"
#include "ppde/model.hpp"
#include "ppde/path_space.hpp"
#include "ppde/rbsde_solver.hpp"
#include "ppde/rng.hpp"
#include "ppde/simulate.hpp"

namespace ppde {

struct FrozenOptions {
    double alpha = 0.2;
    int nodes_per_alpha = 50;  // dx = alpha / nodes_per_alpha
    int depth_cap = 2;
    int boundary_time_points = 10;   // quantized child solves per lateral side
    int boundary_space_points = 20;  // quantized child solves on the cap side
    std::size_t fallback_steps = 40;
    std::size_t fallback_paths = 2000;
    std::uint64_t seed = 1;
    double lcp_tol = 1e-8;
    std::size_t psor_max_iter = 10000;
    double psor_omega = 1.2;
    std::size_t max_cells = 200000;
};

struct FrozenMesh {
    double alpha = 0.0;
    double T = 0.0;
    double dt = 0.0;
    double dx = 0.0;
    std::size_t N = 0;           // global steps on [0, T]
    std::size_t cell_steps = 0;  // steps per full cell
    int nx_half = 0;
};

/// dt = alpha / cell_steps <= min(dx, 1 / (L0 + m)) on a grid that divides T.
inline FrozenMesh frozen_mesh(const ProblemData& data, const FrozenOptions& opt, double m) {
    if (data.d != 1) throw DomainError("frozen scheme: d must be 1");
    if (!(opt.alpha > 0.0)) throw ParameterError("frozen scheme: alpha must be positive");
    if (opt.nodes_per_alpha < 2) throw ParameterError("frozen scheme: nodes_per_alpha must be >= 2");
    if (opt.depth_cap < 0) throw ParameterError("frozen scheme: depth_cap must be >= 0");
    if (m < 0.0) throw ParameterError("frozen scheme: m must be >= 0");
    FrozenMesh mesh;
    mesh.alpha = opt.alpha;
    mesh.T = data.T;
    mesh.nx_half = opt.nodes_per_alpha;
    mesh.dx = opt.alpha / opt.nodes_per_alpha;
    const double dt_max = std::min(mesh.dx, 1.0 / (data.L0 + m));
    const auto q = static_cast<std::size_t>(std::max(1, opt.boundary_time_points));
    std::size_t cs = static_cast<std::size_t>(std::ceil(opt.alpha / dt_max / static_cast<double>(q) - 1e-9)) * q;
    double dt = opt.alpha / static_cast<double>(cs);
    auto N = static_cast<std::size_t>(std::llround(data.T / dt));
    if (N == 0 || std::abs(static_cast<double>(N) * dt - data.T) > 1e-9 * data.T) {
        N = static_cast<std::size_t>(std::ceil(data.T / dt - 1e-9));
        dt = data.T / static_cast<double>(N);
        cs = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opt.alpha / dt)));
    }
    mesh.dt = dt;
    mesh.N = N;
    mesh.cell_steps = cs;
    if (dt * (data.L0 + m) > 1.0 + 1e-12) throw ParameterError("frozen scheme: dt (L0 + m) > 1");
    return mesh;
}

/// Cascade prefix pi_n; the last knot is the anchor (t_n, x_n).
struct FrozenCell {
    Skeleton pi;
    double alpha = 0.2;

    [[nodiscard]] double anchor_time() const { return pi.back().t; }
    [[nodiscard]] double anchor_value() const {
        double s = 0.0;
        for (const auto& k : pi) s += k.x(0);
        return s;
    }
    static FrozenCell root(double alpha) { return {{SkeletonKnot{0.0, Vec::Zero(1)}}, alpha}; }
};

inline void check_cell(const FrozenCell& c) {
    if (c.pi.empty()) throw DomainError("frozen cell: empty skeleton");
    if (!(c.alpha > 0.0)) throw DomainError("frozen cell: alpha must be positive");
    for (std::size_t i = 0; i < c.pi.size(); ++i) {
        if (c.pi[i].x.size() != 1) throw DomainError("frozen cell: d must be 1");
        if (std::abs(c.pi[i].x(0)) > c.alpha + detail::level_tol(c.alpha)) throw DomainError("frozen cell: |x_i| > alpha");
        if (i > 0) {
            const double gap = c.pi[i].t - c.pi[i - 1].t;
            if (gap < -detail::kTimeTol || gap > c.alpha + 1e-9) throw DomainError("frozen cell: knot gaps must lie in [0, alpha]");
        }
    }
}

/// Data evaluated at (ch_i, omega-hat), held constant between knots.
struct FrozenData {
    std::shared_ptr<const DiscretePath> hat;
    std::vector<double> knot_times;
    double xi_hat = 0.0;
    std::function<double(double s, double y, const Vec& z, int k)> F;
    std::function<double(double s)> h;

    [[nodiscard]] double knot_before(double s) const {
        double out = knot_times.front();
        for (double k : knot_times)
            if (k <= s + detail::kTimeTol) out = k;
        return out;
    }
};

/// sample starts at t; the cell anchor must not be after t.
inline FrozenData freeze_data(const ProblemData& data, const FrozenCell& cell, double t, const Vec& x,
                              const DiscretePath& sample) {
    check_cell(cell);
    FrozenData fd;
    fd.hat = std::make_shared<const DiscretePath>(interpolate_hat_path(cell.pi, t, x, cell.alpha, sample, data.T));
    for (const auto& k : cell.pi) fd.knot_times.push_back(k.t);
    const auto casc = level_cascade(t, x, cell.alpha, sample, cell.anchor_time(), data.T);
    for (double s : casc.times) fd.knot_times.push_back(s);
    fd.xi_hat = data.xi(*fd.hat);
    auto hat = fd.hat;
    auto knots = fd.knot_times;
    auto before = [knots](double s) {
        double out = knots.front();
        for (double k : knots)
            if (k <= s + detail::kTimeTol) out = k;
        return out;
    };
    const Driver F = data.F;
    const Barrier h = data.h;
    fd.F = [F, hat, before](double s, double y, const Vec& z, int k) { return F(PathPoint{before(s), *hat}, y, z, k); };
    fd.h = [h, hat, before](double s) { return h(PathPoint{before(s), *hat}); };
    return fd;
}

enum class CellKind { penalized, obstacle };

/// Grid rows are time levels from t_start; node j sits at x = (j - nx_half) dx relative to the anchor.
struct CellSolution {
    CellKind kind = CellKind::obstacle;
    double penalty = 0.0;
    double t_start = 0.0;
    double t_end = 0.0;
    double dt = 0.0;
    double dx = 0.0;
    int nx_half = 0;
    std::size_t n0 = 0;
    std::size_t n_levels = 0;
    double barrier = 0.0;  // h(t_n, pi-hat_n)
    double root = 0.0;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<double>> dK;  // obstacle multipliers, zero off the contact set
    std::vector<std::vector<int>> control;
    std::vector<double> lower_trace, upper_trace, cap_trace;
    int depth = 0;
    std::vector<long long> memo_key;
    double complementarity_residual = 0.0;
    std::size_t lcp_iterations = 0;
    std::size_t psor_sweeps = 0;

    [[nodiscard]] double x(std::size_t j) const { return (static_cast<double>(j) - nx_half) * dx; }
    [[nodiscard]] double time(std::size_t l) const { return t_start + dt * static_cast<double>(l); }
};

namespace detail {

/// Tridiagonal solve: lo[j] u[j-1] + di[j] u[j] + up[j] u[j+1] = rhs[j].
inline void thomas(const std::vector<double>& lo, std::vector<double> di, const std::vector<double>& up,
                   std::vector<double> rhs, std::vector<double>& u) {
    const std::size_t n = di.size();
    for (std::size_t j = 1; j < n; ++j) {
        const double w = lo[j] / di[j - 1];
        di[j] -= w * up[j - 1];
        rhs[j] -= w * rhs[j - 1];
    }
    u.resize(n);
    u[n - 1] = rhs[n - 1] / di[n - 1];
    for (std::size_t j = n - 1; j-- > 0;) u[j] = (rhs[j] - up[j] * u[j + 1]) / di[j];
}

struct LcpResult {
    std::vector<double> u;
    std::vector<double> multiplier;
    double residual = 0.0;
    std::size_t iterations = 0;
    std::size_t psor_sweeps = 0;
};

/// min(A u - b, u - g) = 0 for the tridiagonal M-matrix A = (-a, 1 + 2a, -a):
/// policy iteration, then projected SOR until the scaled residual is below tol.
inline LcpResult solve_lcp(const std::vector<double>& a, const std::vector<double>& b, double g, double tol,
                           std::size_t psor_cap, double omega) {
    const std::size_t n = b.size();
    LcpResult r;
    std::vector<double> lo(n), di(n), up(n), rhs(n);
    std::vector<char> active(n, 0);
    auto residual_row = [&](const std::vector<double>& u, std::size_t j) {
        const double um = j > 0 ? u[j - 1] : 0.0, upv = j + 1 < n ? u[j + 1] : 0.0;
        return (1.0 + 2.0 * a[j]) * u[j] - a[j] * (um + upv) - b[j];
    };
    for (std::size_t it = 0; it < n + 2; ++it) {
        for (std::size_t j = 0; j < n; ++j) {
            if (active[j]) {
                lo[j] = up[j] = 0.0;
                di[j] = 1.0;
                rhs[j] = g;
            } else {
                lo[j] = j > 0 ? -a[j] : 0.0;
                up[j] = j + 1 < n ? -a[j] : 0.0;
                di[j] = 1.0 + 2.0 * a[j];
                rhs[j] = b[j];
            }
        }
        thomas(lo, di, up, rhs, r.u);
        ++r.iterations;
        bool changed = false;
        for (std::size_t j = 0; j < n; ++j) {
            const double eq = residual_row(r.u, j) / (1.0 + 2.0 * a[j]);
            const char next = (r.u[j] - g) < eq ? 1 : 0;
            if (next != active[j]) changed = true;
            active[j] = next;
        }
        if (!changed) break;
    }
    auto max_residual = [&]() {
        double worst = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double eq = residual_row(r.u, j) / (1.0 + 2.0 * a[j]);
            worst = std::max(worst, std::abs(std::min(eq, r.u[j] - g)));
        }
        return worst;
    };
    r.residual = max_residual();
    while (r.residual > tol) {
        if (r.psor_sweeps >= psor_cap) throw NumericError("frozen scheme: PSOR did not converge");
        for (std::size_t j = 0; j < n; ++j) {
            const double um = j > 0 ? r.u[j - 1] : 0.0, upv = j + 1 < n ? r.u[j + 1] : 0.0;
            const double gs = (b[j] + a[j] * (um + upv)) / (1.0 + 2.0 * a[j]);
            r.u[j] = std::max(g, (1.0 - omega) * r.u[j] + omega * gs);
        }
        ++r.psor_sweeps;
        r.residual = max_residual();
    }
    r.multiplier.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        if (r.u[j] - g <= tol) r.multiplier[j] = std::max(0.0, residual_row(r.u, j));
    return r;
}

inline std::vector<std::size_t> quantized_indices(std::size_t last, std::size_t stride) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < last; i += std::max<std::size_t>(1, stride)) out.push_back(i);
    out.push_back(last);
    return out;
}

/// Linear interpolation of values known at sorted indices.
inline std::vector<double> fill_between(const std::vector<std::size_t>& idx, const std::vector<double>& vals, std::size_t last) {
    std::vector<double> out(last + 1);
    for (std::size_t q = 0; q + 1 < idx.size(); ++q) {
        const std::size_t i0 = idx[q], i1 = idx[q + 1];
        for (std::size_t i = i0; i <= i1; ++i) {
            const double w = i1 == i0 ? 0.0 : static_cast<double>(i - i0) / static_cast<double>(i1 - i0);
            out[i] = (1.0 - w) * vals[q] + w * vals[q + 1];
        }
    }
    if (idx.size() == 1) out[idx[0]] = vals[0];
    return out;
}

}  // namespace detail

/// theta^{m,alpha}_n and Gamma^alpha_n on level-cascade cells with a memoized boundary recursion.
class FrozenScheme {
public:
    using BoundaryOverride = std::function<std::optional<double>(double t, double x)>;

    struct Stats {
        std::size_t cells_solved = 0;
        std::size_t memo_hits = 0;
        std::size_t fallback_solves = 0;
        std::string fallback_method;
    };

    FrozenScheme(ProblemData data, FrozenOptions opt, double m)
        : data_(std::move(data)), opt_(opt), m_(m), mesh_(frozen_mesh(data_, opt_, m)) {
        stats_.fallback_method = data_.dependence == PathDependence::current_value ? "tree" : "lsmc";
    }

    [[nodiscard]] const FrozenMesh& mesh() const { return mesh_; }
    [[nodiscard]] const FrozenOptions& options() const { return opt_; }
    [[nodiscard]] const ProblemData& data() const { return data_; }
    [[nodiscard]] double penalty() const { return m_; }
    [[nodiscard]] Stats stats() const {
        std::lock_guard<std::mutex> lk(mu_);
        return stats_;
    }

    /// Replaces boundary values of depth-0 cells where it returns a value.
    void set_boundary_override(BoundaryOverride f) { override_ = std::move(f); }

    void clear_memo() {
        std::lock_guard<std::mutex> lk(mu_);
        memo_.clear();
    }

    CellSolution solve_penalized_cell(const FrozenCell& cell, bool keep_grid = true) {
        return solve_cell(CellKind::penalized, cell, 0, keep_grid);
    }
    CellSolution solve_obstacle_cell(const FrozenCell& cell, bool keep_grid = true) {
        return solve_cell(CellKind::obstacle, cell, 0, keep_grid);
    }

    /// theta_n or Gamma_n (pi; t_n, 0) at recursion depth `depth`, memoized.
    double root_value(CellKind kind, const Skeleton& pi, int depth) {
        const auto key = memo_key(kind, pi, depth);
        {
            std::lock_guard<std::mutex> lk(mu_);
            if (auto it = memo_.find(key); it != memo_.end()) {
                ++stats_.memo_hits;
                return it->second;
            }
        }
        const double v = depth > opt_.depth_cap ? fallback(kind, pi) : solve_cell(kind, FrozenCell{pi, opt_.alpha}, depth, false).root;
        std::lock_guard<std::mutex> lk(mu_);
        return memo_.emplace(key, v).first->second;
    }

    /// Frozen barrier h(t_n, pi-hat_n).
    [[nodiscard]] double frozen_barrier(const Skeleton& pi) const {
        const auto path = anchor_path(pi);
        return data_.h(PathPoint{pi.back().t, path});
    }

    [[nodiscard]] std::size_t time_index(double t) const {
        const auto i = static_cast<std::size_t>(std::llround(t / mesh_.dt));
        if (std::abs(static_cast<double>(i) * mesh_.dt - t) > 1e-9 * std::max(1.0, t) || i > mesh_.N)
            throw DomainError("frozen scheme: knot time is not on the grid");
        return i;
    }

    [[nodiscard]] std::vector<long long> memo_key(CellKind kind, const Skeleton& pi, int depth) const {
        std::vector<long long> key{kind == CellKind::obstacle ? 1 : 0,
                                   depth > opt_.depth_cap ? -1 : opt_.depth_cap - depth,
                                   static_cast<long long>(time_index(pi.back().t))};
        auto q = [&](double v) { return static_cast<long long>(std::llround(v / mesh_.dx)); };
        double s = 0.0, hi = 0.0, lo = 0.0;
        for (const auto& k : pi) {
            s += k.x(0);
            hi = std::max(hi, s);
            lo = std::min(lo, s);
        }
        switch (data_.dependence) {
            case PathDependence::current_value: key.push_back(q(s)); break;
            case PathDependence::running_extrema:
                key.insert(key.end(), {q(s), q(hi), q(lo)});
                break;
            case PathDependence::general:
                for (const auto& k : pi) key.insert(key.end(), {static_cast<long long>(time_index(k.t)), q(k.x(0))});
                break;
        }
        return key;
    }

    /// xi on the skeleton extended by the knot (T, x).
    [[nodiscard]] double terminal_value(const Skeleton& pi, double x) const {
        const auto path = anchor_path(extend(pi, mesh_.T, x));
        return data_.xi(path);
    }

private:
    [[nodiscard]] DiscretePath anchor_path(const Skeleton& pi) const {
        if (data_.dependence == PathDependence::current_value) {
            double s = 0.0;
            for (const auto& k : pi) s += k.x(0);
            return point_path(pi.back().t, s, mesh_.dt);
        }
        return skeleton_path(pi, mesh_.dt, mesh_.T);
    }

    static Skeleton extend(const Skeleton& pi, double t, double x) {
        Skeleton out = pi;
        out.push_back(SkeletonKnot{t, Vec::Constant(1, x)});
        return out;
    }

    double fallback(CellKind kind, const Skeleton& pi) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            ++stats_.fallback_solves;
        }
        const double s = pi.back().t;
        if (data_.dependence == PathDependence::current_value) {
            const auto path = anchor_path(pi);
            TreeOptions o;
            o.n_steps = std::max<std::size_t>(4, static_cast<std::size_t>(std::ceil(
                                                     static_cast<double>(opt_.fallback_steps) * (mesh_.T - s) / mesh_.T - 1e-9)));
            o.reflect = kind == CellKind::obstacle;
            if (kind == CellKind::penalized) {
                o.penalty = m_;
                o.implicit_penalty = true;
            }
            return solve_rbsde_tree(data_, PathPoint{s, path}, o).y0;
        }
        const auto path = skeleton_path(pi, mesh_.dt, mesh_.T);
        const std::size_t n = mesh_.N - time_index(s);
        double best = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < data_.n_controls(); ++k) {
            const auto b = euler_bundle(data_, PathPoint{s, path}, ControlPolicy::constant(k, n), n, opt_.fallback_paths, opt_.seed);
            const auto sol = kind == CellKind::obstacle ? solve_rbsde_lsmc(data_, b) : solve_rbsde_lsmc(data_, b, {}, false, m_);
            best = std::max(best, sol.y0);
        }
        return best;
    }

    double child(CellKind kind, const Skeleton& pi, double t, double x, int depth) {
        return root_value(kind, extend(pi, t, x), depth + 1);
    }

    CellSolution solve_cell(CellKind kind, const FrozenCell& cell, int depth, bool keep_grid) {
        check_cell(cell);
        if (std::abs(cell.alpha - opt_.alpha) > 1e-12) throw DomainError("frozen scheme: cell alpha differs from the scheme");
        {
            std::lock_guard<std::mutex> lk(mu_);
            if (++stats_.cells_solved > opt_.max_cells) throw BudgetError("frozen scheme: cell budget exhausted");
        }
        const Skeleton& pi = cell.pi;
        const std::size_t n0 = time_index(pi.back().t);
        if (n0 >= mesh_.N) throw DomainError("frozen scheme: anchor at the horizon");
        const std::size_t n1 = std::min(n0 + mesh_.cell_steps, mesh_.N);
        const std::size_t nt = n1 - n0;
        const int H = mesh_.nx_half;
        const auto nx = static_cast<std::size_t>(2 * H + 1);
        const double dt = mesh_.dt, dx = mesh_.dx, alpha = mesh_.alpha;

        CellSolution sol;
        sol.kind = kind;
        sol.penalty = kind == CellKind::penalized ? m_ : 0.0;
        sol.n0 = n0;
        sol.n_levels = nt;
        sol.dt = dt;
        sol.dx = dx;
        sol.nx_half = H;
        sol.t_start = static_cast<double>(n0) * dt;
        sol.t_end = static_cast<double>(n1) * dt;
        sol.depth = depth;
        sol.memo_key = memo_key(kind, pi, depth);

        const DiscretePath apath = anchor_path(pi);
        const PathPoint pt{sol.t_start, apath};
        const double hb = data_.h(pt);
        sol.barrier = hb;
        const bool obstacle = kind == CellKind::obstacle;
        auto floor_h = [&](double v) { return obstacle ? std::max(v, hb) : v; };
        const bool use_override = depth == 0 && static_cast<bool>(override_);

        // cap side (level nt)
        std::vector<double> cap(nx);
        const double t1 = sol.t_end;
        const bool at_T = n1 == mesh_.N;
        if (use_override) {
            for (std::size_t j = 0; j < nx; ++j) {
                const double x = sol.x(j);
                if (auto v = override_(t1, x)) cap[j] = *v;
                else cap[j] = floor_h(at_T ? terminal_value(pi, x) : child(kind, pi, t1, x, depth));
            }
        } else if (at_T) {
            for (std::size_t j = 0; j < nx; ++j) cap[j] = floor_h(terminal_value(pi, sol.x(j)));
        } else {
            const auto stride = static_cast<std::size_t>(std::max(1, 2 * H / std::max(1, opt_.boundary_space_points)));
            const auto idx = detail::quantized_indices(nx - 1, stride);
            std::vector<double> v;
            for (std::size_t j : idx) v.push_back(floor_h(child(kind, pi, t1, sol.x(j), depth)));
            cap = detail::fill_between(idx, v, nx - 1);
        }

        // lateral sides, levels 0..nt (level nt shares the cap corners)
        std::vector<double> lower(nt + 1), upper(nt + 1);
        if (use_override) {
            for (std::size_t l = 0; l < nt; ++l) {
                const double t = sol.time(l);
                auto lv = override_(t, -alpha), uv = override_(t, alpha);
                lower[l] = lv ? *lv : floor_h(child(kind, pi, t, -alpha, depth));
                upper[l] = uv ? *uv : floor_h(child(kind, pi, t, alpha, depth));
            }
        } else {
            const auto stride = static_cast<std::size_t>(std::max<std::size_t>(1, mesh_.cell_steps / static_cast<std::size_t>(std::max(1, opt_.boundary_time_points))));
            const auto idx = detail::quantized_indices(nt, stride);
            std::vector<double> lv, uv;
            for (std::size_t l : idx) {
                if (l == nt) {
                    lv.push_back(cap.front());
                    uv.push_back(cap.back());
                } else {
                    lv.push_back(floor_h(child(kind, pi, sol.time(l), -alpha, depth)));
                    uv.push_back(floor_h(child(kind, pi, sol.time(l), alpha, depth)));
                }
            }
            lower = detail::fill_between(idx, lv, nt);
            upper = detail::fill_between(idx, uv, nt);
        }
        lower[nt] = cap.front();
        upper[nt] = cap.back();
        sol.lower_trace = lower;
        sol.upper_trace = upper;
        sol.cap_trace = cap;

        const int nk = data_.n_controls();
        std::vector<double> sk(static_cast<std::size_t>(nk));
        for (int k = 0; k < nk; ++k) sk[static_cast<std::size_t>(k)] = data_.sigma_scalar(k);

        if (keep_grid) {
            sol.values.assign(nt + 1, {});
            sol.dK.assign(nt + 1, std::vector<double>(nx, 0.0));
            sol.control.assign(nt + 1, std::vector<int>(nx, 0));
            sol.values[nt] = cap;
        }
        std::vector<double> u = cap, next(nx);
        const std::size_t ni = nx - 2;
        std::vector<double> a(ni), b(ni), lo(ni), di(ni), up(ni), inner;
        std::vector<int> ctl(nx, 0);
        Vec zv(1);
        for (std::size_t l = nt; l-- > 0;) {
            for (std::size_t j = 1; j + 1 < nx; ++j) {
                const double d1 = (u[j + 1] - u[j - 1]) / (2.0 * dx);
                const double d2 = (u[j + 1] - 2.0 * u[j] + u[j - 1]) / (dx * dx);
                double best = -std::numeric_limits<double>::infinity(), fbest = 0.0;
                int kb = 0;
                for (int k = 0; k < nk; ++k) {
                    const double s = sk[static_cast<std::size_t>(k)];
                    zv(0) = s * d1;
                    const double f = data_.F(pt, u[j], zv, k);
                    const double g = 0.5 * s * s * d2 + f;
                    if (g > best) {
                        best = g;
                        kb = k;
                        fbest = f;
                    }
                }
                ctl[j] = kb;
                const double s = sk[static_cast<std::size_t>(kb)];
                const std::size_t r = j - 1;
                a[r] = 0.5 * s * s * dt / (dx * dx);
                b[r] = u[j] + dt * fbest;
                if (!obstacle && u[j] < hb) b[r] += dt * m_ * (hb - u[j]);
            }
            b[0] += a[0] * lower[l];
            b[ni - 1] += a[ni - 1] * upper[l];
            next[0] = lower[l];
            next[nx - 1] = upper[l];
            if (obstacle) {
                const auto res = detail::solve_lcp(a, b, hb, opt_.lcp_tol, opt_.psor_max_iter, opt_.psor_omega);
                for (std::size_t r = 0; r < ni; ++r) next[r + 1] = res.u[r];
                sol.complementarity_residual = std::max(sol.complementarity_residual, res.residual);
                sol.lcp_iterations = std::max(sol.lcp_iterations, res.iterations);
                sol.psor_sweeps += res.psor_sweeps;
                if (keep_grid)
                    for (std::size_t r = 0; r < ni; ++r) sol.dK[l][r + 1] = res.multiplier[r];
            } else {
                for (std::size_t r = 0; r < ni; ++r) {
                    lo[r] = r > 0 ? -a[r] : 0.0;
                    up[r] = r + 1 < ni ? -a[r] : 0.0;
                    di[r] = 1.0 + 2.0 * a[r];
                }
                detail::thomas(lo, di, up, b, inner);
                for (std::size_t r = 0; r < ni; ++r) next[r + 1] = inner[r];
            }
            for (double v : next)
                if (!std::isfinite(v)) throw NumericError("frozen scheme: non-finite cell value");
            u.swap(next);
            if (keep_grid) {
                sol.values[l] = u;
                sol.control[l] = ctl;
            }
        }
        sol.root = u[static_cast<std::size_t>(H)];
        return sol;
    }

    ProblemData data_;
    FrozenOptions opt_;
    double m_;
    FrozenMesh mesh_;
    BoundaryOverride override_;
    mutable std::mutex mu_;
    std::map<std::vector<long long>, double> memo_;
    Stats stats_;
};

/// Geometric sum of the alpha / 2^n boundary offsets over the resolved depths.
inline double envelope_correction(double alpha, int depth_cap) {
    double c = 0.0;
    for (int n = 0; n <= depth_cap; ++n) c += alpha / std::ldexp(1.0, n);
    return c;
}

struct EnvelopeValues {
    double alpha = 0.0;
    double m = 0.0;
    int depth_cap = 0;
    double theta0 = 0.0;
    double gamma0 = 0.0;
    double rho = 0.0;
    double correction = 0.0;
    double psi0 = 0.0;
    double phi0 = 0.0;
    std::size_t cells = 0;
    std::size_t fallback_solves = 0;
    std::string fallback_method;

    [[nodiscard]] double gap() const { return phi0 - psi0; }
};

/// psi0 = theta_0 - rho0(alpha) - correction, phi0 = Gamma_0 + rho0(alpha) + correction at (0, 0).
inline EnvelopeValues envelope_values(const ProblemData& data, double alpha, double m, int depth_cap, FrozenOptions opt = {}) {
    opt.alpha = alpha;
    opt.depth_cap = depth_cap;
    FrozenScheme scheme(data, opt, m);
    const auto cell = FrozenCell::root(alpha);
    EnvelopeValues e;
    e.alpha = alpha;
    e.m = m;
    e.depth_cap = depth_cap;
    e.theta0 = scheme.solve_penalized_cell(cell, false).root;
    e.gamma0 = scheme.solve_obstacle_cell(cell, false).root;
    e.rho = data.rho0(alpha);
    e.correction = envelope_correction(alpha, depth_cap);
    e.psi0 = e.theta0 - e.rho - e.correction;
    e.phi0 = e.gamma0 + e.rho + e.correction;
    const auto st = scheme.stats();
    e.cells = st.cells_solved;
    e.fallback_solves = st.fallback_solves;
    e.fallback_method = st.fallback_method;
    return e;
}

struct SandwichRow {
    EnvelopeValues env;
    double u0 = 0.0;
    double slack = 0.0;
    bool holds = false;
};

struct SandwichReport {
    std::string instance;
    std::vector<SandwichRow> rows;
    bool all_hold = true;
    bool gap_nonincreasing = true;
};

inline SandwichRow sandwich_check(const ProblemData& data, double alpha, double m, double u0_estimate, double slack,
                                  int depth_cap = 2, const FrozenOptions& opt = {}) {
    SandwichRow r;
    r.env = envelope_values(data, alpha, m, depth_cap, opt);
    r.u0 = u0_estimate;
    r.slack = slack;
    r.holds = r.env.psi0 - slack <= u0_estimate && u0_estimate <= r.env.phi0 + slack;
    return r;
}

/// Rows in the order of alphas; the gap trend is checked along that order.
inline SandwichReport sandwich_check(const ProblemData& data, const std::vector<double>& alphas, double m, double u0_estimate,
                                     double slack, int depth_cap = 2, const FrozenOptions& opt = {}) {
    SandwichReport rep;
    rep.instance = data.name;
    for (double a : alphas) {
        rep.rows.push_back(sandwich_check(data, a, m, u0_estimate, slack, depth_cap, opt));
        rep.all_hold = rep.all_hold && rep.rows.back().holds;
        if (rep.rows.size() > 1 && rep.rows.back().env.gap() > rep.rows[rep.rows.size() - 2].env.gap() + 1e-12)
            rep.gap_nonincreasing = false;
    }
    return rep;
}

inline void write_csv(std::ostream& os, const CellSolution& c) {
    os << "level,time,x,value,dK,control\n" << std::setprecision(12);
    for (std::size_t l = 0; l < c.values.size(); ++l)
        for (std::size_t j = 0; j < c.values[l].size(); ++j)
            os << l << ',' << c.time(l) << ',' << c.x(j) << ',' << c.values[l][j] << ',' << c.dK[l][j] << ','
               << c.control[l][j] << '\n';
}

inline void write_csv(std::ostream& os, const SandwichReport& r) {
    os << "instance,alpha,m,depth_cap,theta0,gamma0,rho,correction,psi0,phi0,gap,u0,slack,holds\n" << std::setprecision(12);
    for (const auto& row : r.rows) {
        const auto& e = row.env;
        os << r.instance << ',' << e.alpha << ',' << e.m << ',' << e.depth_cap << ',' << e.theta0 << ',' << e.gamma0 << ','
           << e.rho << ',' << e.correction << ',' << e.psi0 << ',' << e.phi0 << ',' << e.gap() << ',' << row.u0 << ','
           << row.slack << ',' << (row.holds ? 1 : 0) << '\n';
    }
}

struct ReplayOptions {
    std::size_t n_paths = 20;
    std::uint64_t seed = 1;
};

struct ReplayReport {
    RbsdeSolution solution;  // paths layout on the global grid
    std::vector<std::vector<std::size_t>> knot_steps;
    SkorokhodReport skorokhod;
    double knot_K = 0.0;
    double interior_K = 0.0;
    std::size_t cells_visited = 0;

    [[nodiscard]] double off_knot_fraction() const { return skorokhod.off_knot_fraction.value_or(0.0); }
};

/// Obstacle solves replayed as discrete RBSDEs along simulated paths: interior dK from the
/// complementarity multipliers, knot jumps (h(t_n, pi-hat_n) - Gamma_{n+1})^+ at cascade knots.
inline ReplayReport kc_replay(FrozenScheme& scheme, const ReplayOptions& ro = {}) {
    const auto& mesh = scheme.mesh();
    const std::size_t N = mesh.N;
    const double alpha = mesh.alpha;
    const int H = mesh.nx_half;
    ReplayReport rep;
    auto& sol = rep.solution;
    sol.layout = SolutionLayout::paths;
    sol.dt = mesh.dt;
    sol.n_steps = N;
    sol.meta.solver = "frozen_obstacle_replay";
    sol.meta.reflected = true;
    sol.Y.assign(N + 1, std::vector<double>(ro.n_paths, 0.0));
    sol.H.assign(N + 1, std::vector<double>(ro.n_paths, 0.0));
    sol.Z.assign(N + 1, std::vector<double>(ro.n_paths, 0.0));
    sol.dK.assign(N + 1, std::vector<double>(ro.n_paths, 0.0));
    sol.control.assign(N + 1, std::vector<int>(ro.n_paths, 0));
    rep.knot_steps.assign(ro.n_paths, {});
    const Philox4x32 gen(ro.seed);
    const auto& data = scheme.data();
    for (std::size_t p = 0; p < ro.n_paths; ++p) {
        Skeleton pi{SkeletonKnot{0.0, Vec::Zero(1)}};
        long jx = 0;  // node offset from the anchor
        std::size_t step = 0;
        while (true) {
            const auto cell = scheme.solve_obstacle_cell(FrozenCell{pi, alpha}, true);
            ++rep.cells_visited;
            std::size_t l = 0;
            auto node = [&]() { return static_cast<std::size_t>(jx + H); };
            bool exited = false;
            while (!exited) {
                const std::size_t j = node();
                const double y = cell.values[l][j];
                if (l == 0 && step == cell.n0 && pi.size() > 1) {
                    // the knot row was written by the previous cell; add the new cell's own multiplier
                    sol.dK[step][p] += cell.dK[l][j];
                    rep.interior_K += cell.dK[l][j];
                } else {
                    sol.Y[step][p] = y;
                    sol.H[step][p] = cell.barrier;
                    sol.dK[step][p] = cell.dK[l][j];
                    rep.interior_K += cell.dK[l][j];
                }
                if (step == N) break;
                const int k = cell.control[l][j];
                sol.control[step][p] = k;
                const auto z = gen.normals(p, static_cast<std::uint32_t>(step / 4), 0)[step % 4];
                jx += std::lround(data.sigma_scalar(k) * std::sqrt(mesh.dt) * z / mesh.dx);
                ++step;
                ++l;
                if (std::abs(jx) >= H || l == cell.n_levels) {
                    jx = std::clamp<long>(jx, -H, H);
                    const std::size_t jj = node();
                    rep.knot_steps[p].push_back(step);
                    sol.H[step][p] = cell.barrier;
                    const double x_knot = static_cast<double>(jx) * mesh.dx;
                    if (step == N) {
                        const double jump = std::max(0.0, cell.barrier - scheme.terminal_value(pi, x_knot));
                        sol.Y[step][p] = cell.values[l][jj];
                        sol.dK[step][p] = jump;
                        rep.knot_K += jump;
                        exited = true;
                        break;
                    }
                    Skeleton child = pi;
                    child.push_back(SkeletonKnot{static_cast<double>(step) * mesh.dt, Vec::Constant(1, x_knot)});
                    const double g_next = scheme.root_value(CellKind::obstacle, child, 0);
                    const double jump = std::max(0.0, cell.barrier - g_next);
                    sol.Y[step][p] = std::max(g_next, cell.barrier);
                    sol.dK[step][p] = jump;
                    rep.knot_K += jump;
                    pi = std::move(child);
                    jx = 0;
                    exited = true;
                }
            }
            if (step == N) break;
        }
    }
    sol.y0 = 0.0;
    for (std::size_t p = 0; p < ro.n_paths; ++p) sol.y0 += sol.Y[0][p] / static_cast<double>(ro.n_paths);
    rep.skorokhod = skorokhod_report(sol, rep.knot_steps);
    return rep;
}

struct HittingGapOptions {
    double alpha = 0.2;
    std::vector<double> x_list{0.0, 0.0125, 0.025, 0.05, 0.1};
    std::vector<double> delta_list{0.01, 0.02, 0.05, 0.1};
    double L = 1.0;
    double c0 = 1.0;
    double T = 1.0;
    std::size_t n_paths = 2000;
    std::size_t n_steps = 1000;
    std::uint64_t seed = 1;
    std::vector<double> holder_constants{1.0, 2.0, 4.0};
};

struct HittingGapCell {
    double x = 0.0;
    double delta = 0.0;
    double probability = 0.0;
    double std_error = 0.0;
    double bound = 0.0;  // fit |x| / sqrt(delta)
};

struct HittingGapReport {
    std::vector<HittingGapCell> cells;
    std::vector<double> x_list;
    std::vector<double> ch0_gap_mean, ch0_gap_se;
    double probability_fit = 0.0;
    double linear_fit = 0.0;
    bool nonincreasing_in_delta = true;
    bool vanishing_in_x = true;
    bool probability_dominated = true;
    bool ch0_linear_dominated = true;
    std::vector<std::pair<double, double>> holder_frequency;  // (C, fraction of paths in the event)
};

/// Common-random-number estimates of P(sup_i |ch_i^{x} - ch_i^{0}| > delta) over lattice-extremal controls.
inline HittingGapReport hitting_gap_diagnostic(const HittingGapOptions& o) {
    if (!(o.alpha > 0.0) || o.n_paths < 2 || o.n_steps < 2) throw ParameterError("hitting_gap_diagnostic: bad options");
    for (double x : o.x_list)
        if (std::abs(x) > o.alpha) throw DomainError("hitting_gap_diagnostic: |x| > alpha");
    const double dt = o.T / static_cast<double>(o.n_steps);
    const auto lat = make_lattice(o.T, 1, o.L, o.c0);
    const auto& acts = lat.actions;
    const Philox4x32 gen(o.seed);
    const std::size_t nX = o.x_list.size(), nD = o.delta_list.size();
    std::vector<double> exceed(nX * nD, 0.0), g1(nX, 0.0), g2(nX, 0.0);
    std::vector<double> holder(o.holder_constants.size(), 0.0);
    std::vector<double> v(o.n_steps + 1);
    const Vec zero = Vec::Zero(1);
    for (std::size_t p = 0; p < o.n_paths; ++p) {
        const auto& act = acts[p % acts.size()];
        v[0] = 0.0;
        for (std::size_t i = 0; i < o.n_steps; ++i) {
            const double z = gen.normals(p, static_cast<std::uint32_t>(i / 4), 0)[i % 4];
            v[i + 1] = v[i] + act.a * dt + act.b * std::sqrt(dt) * z;
        }
        const DiscretePath path(0.0, dt, 1, v);
        const auto c0 = level_cascade(0.0, zero, o.alpha, path, 0.0, o.T);
        for (std::size_t ix = 0; ix < nX; ++ix) {
            const auto cx = level_cascade(0.0, Vec::Constant(1, o.x_list[ix]), o.alpha, path, 0.0, o.T);
            double gamma = 0.0;
            const std::size_t n = std::max(cx.times.size(), c0.times.size());
            for (std::size_t i = 0; i < n; ++i) {
                const double a = i < cx.times.size() ? cx.times[i] : o.T;
                const double b = i < c0.times.size() ? c0.times[i] : o.T;
                gamma = std::max(gamma, std::abs(a - b));
            }
            for (std::size_t id = 0; id < nD; ++id)
                if (gamma > o.delta_list[id]) exceed[ix * nD + id] += 1.0;
            const double g = std::abs(cx.times[0] - c0.times[0]);
            g1[ix] += g;
            g2[ix] += g * g;
        }
        // dyadic-lag check of |X_s - X_r| <= C |s - r|^{1/3}
        double worst = 0.0;
        for (std::size_t lag = 1; lag <= o.n_steps; lag *= 2) {
            const double scale = std::cbrt(static_cast<double>(lag) * dt);
            for (std::size_t i = 0; i + lag <= o.n_steps; ++i) worst = std::max(worst, std::abs(v[i + lag] - v[i]) / scale);
        }
        for (std::size_t c = 0; c < holder.size(); ++c)
            if (worst <= o.holder_constants[c]) holder[c] += 1.0;
    }
    HittingGapReport r;
    r.x_list = o.x_list;
    const double Np = static_cast<double>(o.n_paths);
    double num = 0.0, den = 0.0;
    for (std::size_t ix = 0; ix < nX; ++ix)
        for (std::size_t id = 0; id < nD; ++id) {
            HittingGapCell c;
            c.x = o.x_list[ix];
            c.delta = o.delta_list[id];
            c.probability = exceed[ix * nD + id] / Np;
            c.std_error = std::sqrt(c.probability * (1.0 - c.probability) / Np);
            const double f = std::abs(c.x) / std::sqrt(c.delta);
            num += f * c.probability;
            den += f * f;
            r.cells.push_back(c);
        }
    r.probability_fit = den > 0.0 ? num / den : 0.0;
    for (auto& c : r.cells) {
        c.bound = r.probability_fit * std::abs(c.x) / std::sqrt(c.delta);
        if (c.probability > c.bound + 3.0 * c.std_error + 1.0 / Np) r.probability_dominated = false;
    }
    for (std::size_t ix = 0; ix < nX; ++ix) {
        for (std::size_t id = 0; id < nD; ++id)
            for (std::size_t jd = 0; jd < nD; ++jd)
                if (o.delta_list[jd] > o.delta_list[id] && r.cells[ix * nD + jd].probability > r.cells[ix * nD + id].probability)
                    r.nonincreasing_in_delta = false;
        for (std::size_t jx = 0; jx < nX; ++jx)
            if (std::abs(o.x_list[jx]) < std::abs(o.x_list[ix]))
                for (std::size_t id = 0; id < nD; ++id) {
                    const auto& small = r.cells[jx * nD + id];
                    const auto& big = r.cells[ix * nD + id];
                    if (small.probability > big.probability + 3.0 * std::hypot(small.std_error, big.std_error)) r.vanishing_in_x = false;
                    if (o.x_list[jx] == 0.0 && small.probability != 0.0) r.vanishing_in_x = false;
                }
    }
    double ln = 0.0, ld = 0.0;
    for (std::size_t ix = 0; ix < nX; ++ix) {
        const double mean = g1[ix] / Np;
        const double var = std::max(0.0, g2[ix] / Np - mean * mean);
        r.ch0_gap_mean.push_back(mean);
        r.ch0_gap_se.push_back(std::sqrt(var / Np));
        ln += std::abs(o.x_list[ix]) * mean;
        ld += o.x_list[ix] * o.x_list[ix];
    }
    r.linear_fit = ld > 0.0 ? ln / ld : 0.0;
    for (std::size_t ix = 0; ix < nX; ++ix)
        if (r.ch0_gap_mean[ix] > r.linear_fit * std::abs(o.x_list[ix]) + 3.0 * r.ch0_gap_se[ix] + 1e-12) r.ch0_linear_dominated = false;
    for (std::size_t c = 0; c < holder.size(); ++c) r.holder_frequency.emplace_back(o.holder_constants[c], holder[c] / Np);
    return r;
}

}  // namespace ppde
