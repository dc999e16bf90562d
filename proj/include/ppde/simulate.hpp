#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <iomanip>
#include <vector>

#include "ppde/errors.hpp"
#include "ppde/model.hpp"
#include "ppde/parallel.hpp"
#include "ppde/path_space.hpp"
#include "ppde/rng.hpp"

namespace ppde {

/// Control index per time step, optionally as feedback on the first coordinate of X.
struct ControlPolicy {
    std::vector<int> per_step;
    std::function<int(std::size_t step, double x)> feedback;

    static ControlPolicy constant(int k, std::size_t n_steps) { return {std::vector<int>(n_steps, k), {}}; }

    /// k1 before switch_step, k2 from switch_step on.
    static ControlPolicy one_switch(int k1, int k2, std::size_t switch_step, std::size_t n_steps) {
        ControlPolicy p;
        p.per_step.resize(n_steps);
        for (std::size_t i = 0; i < n_steps; ++i) p.per_step[i] = i < switch_step ? k1 : k2;
        return p;
    }

    [[nodiscard]] int at(std::size_t step, double x) const {
        if (feedback) return feedback(step, x);
        if (per_step.empty()) return 0;
        return per_step[std::min(step, per_step.size() - 1)];
    }

    void check(int n_controls, std::size_t n_steps) const {
        for (std::size_t i = 0; i < std::min(n_steps, per_step.size()); ++i)
            if (per_step[i] < 0 || per_step[i] >= n_controls) throw DomainError("ControlPolicy: index outside K");
    }
};

struct PathBundle {
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    double t = 0.0;
    double dt = 0.0;
    int dim = 1;
    DiscretePath base;  // omega on [0, t]
    ControlPolicy policy;
    std::vector<DiscretePath> paths;  // X on [t, T], starting at 0
    std::vector<double> dW;           // [path][step][dim]
    std::uint64_t seed = 0;
    bool antithetic = true;

    [[nodiscard]] double noise(std::size_t path, std::size_t step, int c) const {
        return dW[(path * n_steps + step) * static_cast<std::size_t>(dim) + static_cast<std::size_t>(c)];
    }

    /// omega (x)_t X for path j, on the grid of X extended back to 0 when t sits on it.
    [[nodiscard]] DiscretePath full_path(std::size_t j) const {
        if (base.size() <= 1) return paths[j];
        return concat(base, paths[j]);
    }
};

/// Standard normal for (seed, path, step, component); antithetic pairs share |z|.
inline double bundle_normal(const Philox4x32& gen, std::size_t path, std::size_t step, int c, bool antithetic) {
    const std::uint64_t pair = antithetic ? path / 2 : path;
    const double z = gen.normals(pair, static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(c / 4))[static_cast<std::size_t>(c % 4)];
    return antithetic && (path % 2 == 1) ? -z : z;
}

/// X_{i+1} = X_i + sigma(k_i) dW_i from X_t = 0 on n_steps uniform steps to T.
inline PathBundle euler_bundle(const ProblemData& data, const PathPoint& base, const ControlPolicy& policy,
                               std::size_t n_steps, std::size_t n_paths, std::uint64_t seed, bool antithetic = true) {
    if (n_steps < 1) throw ParameterError("euler_bundle: n_steps must be >= 1");
    if (base.t >= data.T) throw DomainError("euler_bundle: base time must be before T");
    policy.check(data.n_controls(), n_steps);
    PathBundle b;
    b.n_paths = n_paths;
    b.n_steps = n_steps;
    b.t = base.t;
    b.dt = (data.T - base.t) / static_cast<double>(n_steps);
    b.dim = data.d;
    b.base = truncate(base.path, base.t);
    if (b.base.size() > 1 && std::abs(b.base.dt() - b.dt) > 1e-12 * b.dt)
        throw DomainError("euler_bundle: base path step must match the simulation step");
    b.policy = policy;
    b.seed = seed;
    b.antithetic = antithetic;
    b.paths.resize(n_paths);
    const auto d = static_cast<std::size_t>(data.d);
    b.dW.assign(n_paths * n_steps * d, 0.0);
    const Philox4x32 gen(seed);
    const double sq = std::sqrt(b.dt);
    parallel_for(0, n_paths, [&](std::size_t j) {
        std::vector<double> v((n_steps + 1) * d, 0.0);
        Vec dw(data.d);
        for (std::size_t i = 0; i < n_steps; ++i) {
            for (int c = 0; c < data.d; ++c) {
                dw(c) = sq * bundle_normal(gen, j, i, c, antithetic);
                b.dW[(j * n_steps + i) * d + static_cast<std::size_t>(c)] = dw(c);
            }
            const int k = policy.at(i, v[i * d]);
            const Vec dx = data.sigma[static_cast<std::size_t>(k)] * dw;
            for (std::size_t c = 0; c < d; ++c) v[(i + 1) * d + c] = v[i * d + c] + dx(static_cast<Eigen::Index>(c));
        }
        b.paths[j] = DiscretePath(base.t, b.dt, data.d, std::move(v));
    });
    return b;
}

struct MomentReport {
    double sup2 = 0.0;     // E sup_s |X_s|^2
    double sup4 = 0.0;     // E sup_s |X_s|^4
    double sup2_se = 0.0;  // standard error of sup2
    double terminal_mean = 0.0;
    double terminal_var = 0.0;
};

inline MomentReport moment_report(const PathBundle& b) {
    MomentReport r;
    const std::size_t n = b.paths.size();
    if (n == 0) return r;
    std::vector<double> s2(n), xt(n);
    for (std::size_t j = 0; j < n; ++j) {
        double m = 0.0;
        const auto& p = b.paths[j];
        for (std::size_t i = 0; i < p.size(); ++i) m = std::max(m, p.at(i).squaredNorm());
        s2[j] = m;
        xt[j] = p.value(p.size() - 1);
    }
    double a = 0.0, a2 = 0.0, q = 0.0, mt = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        a += s2[j];
        a2 += s2[j] * s2[j];
        q += s2[j] * s2[j];
        mt += xt[j];
    }
    const double nn = static_cast<double>(n);
    r.sup2 = a / nn;
    r.sup4 = q / nn;
    r.sup2_se = n > 1 ? std::sqrt(std::max(0.0, (a2 / nn - r.sup2 * r.sup2) / (nn - 1.0))) : 0.0;
    r.terminal_mean = mt / nn;
    double v = 0.0;
    for (double x : xt) v += (x - r.terminal_mean) * (x - r.terminal_mean);
    r.terminal_var = n > 1 ? v / (nn - 1.0) : 0.0;
    return r;
}

/// max over paths and steps of |X - X'| for two bundles sharing the same noise.
inline double common_noise_gap(const PathBundle& a, const PathBundle& b) {
    if (a.paths.size() != b.paths.size() || a.n_steps != b.n_steps) throw DomainError("common_noise_gap: shape mismatch");
    double g = 0.0;
    for (std::size_t j = 0; j < a.paths.size(); ++j)
        for (std::size_t i = 0; i < a.paths[j].size(); ++i) g = std::max(g, (a.paths[j].at(i) - b.paths[j].at(i)).norm());
    return g;
}

inline void write_csv(std::ostream& os, const PathBundle& b) {
    os << "path,time";
    for (int c = 0; c < b.dim; ++c) os << ",x_" << (c + 1);
    os << '\n' << std::setprecision(17);
    for (std::size_t j = 0; j < b.paths.size(); ++j)
        for (std::size_t i = 0; i < b.paths[j].size(); ++i) {
            os << j << ',' << b.paths[j].time(i);
            for (int c = 0; c < b.dim; ++c) os << ',' << b.paths[j].value(i, c);
            os << '\n';
        }
}

}  // namespace ppde
