#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ppde/errors.hpp"

namespace ppde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace detail {
inline constexpr double kTimeTol = 1e-9;

inline double level_tol(double level) { return 1e-12 * std::max(1.0, level); }
}  // namespace detail

/// Uniformly sampled path in R^d starting at the origin at time t0.
class DiscretePath {
public:
    DiscretePath() = default;

    DiscretePath(double t0, double dt, int dim, std::vector<double> values)
        : t0_(t0), dt_(dt), dim_(dim), values_(std::move(values)) {
        if (dim_ < 1) throw DomainError("DiscretePath: dim must be >= 1");
        if (!(dt_ > 0.0)) throw DomainError("DiscretePath: dt must be positive");
        if (values_.empty() || values_.size() % static_cast<std::size_t>(dim_) != 0)
            throw DomainError("DiscretePath: value count is not a positive multiple of dim");
        for (int c = 0; c < dim_; ++c)
            if (values_[static_cast<std::size_t>(c)] != 0.0)
                throw DomainError("DiscretePath: first point must be the origin");
    }

    static DiscretePath zeros(double t0, double dt, int dim, std::size_t n_points) {
        return {t0, dt, dim, std::vector<double>(n_points * static_cast<std::size_t>(dim), 0.0)};
    }

    /// Samples f(t) - f(t0) on the grid so the first point is the origin.
    static DiscretePath from_function(double t0, double dt, int dim, std::size_t n_points,
                                      const std::function<Vec(double)>& f) {
        std::vector<double> v(n_points * static_cast<std::size_t>(dim));
        const Vec base = f(t0);
        for (std::size_t i = 0; i < n_points; ++i) {
            const Vec x = f(t0 + static_cast<double>(i) * dt) - base;
            for (int c = 0; c < dim; ++c) v[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(c)] = i == 0 ? 0.0 : x(c);
        }
        return {t0, dt, dim, std::move(v)};
    }

    [[nodiscard]] double t0() const { return t0_; }
    [[nodiscard]] double dt() const { return dt_; }
    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] std::size_t size() const { return values_.size() / static_cast<std::size_t>(dim_); }
    [[nodiscard]] double end_time() const { return time(size() - 1); }
    [[nodiscard]] double time(std::size_t i) const { return t0_ + static_cast<double>(i) * dt_; }
    [[nodiscard]] const std::vector<double>& raw() const { return values_; }

    [[nodiscard]] Eigen::Map<const Vec> at(std::size_t i) const {
        return Eigen::Map<const Vec>(values_.data() + i * static_cast<std::size_t>(dim_), dim_);
    }
    [[nodiscard]] double value(std::size_t i, int c = 0) const {
        return values_[i * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(c)];
    }

    [[nodiscard]] bool covers(double t) const {
        return t >= t0_ - detail::kTimeTol * std::max(1.0, dt_) && t <= end_time() + detail::kTimeTol * std::max(1.0, dt_);
    }

    /// Nearest grid index to t; throws if t lies outside the sampled span.
    [[nodiscard]] std::size_t index_of(double t) const {
        if (!covers(t)) {
            std::ostringstream os;
            os << "time " << t << " outside path span [" << t0_ << ", " << end_time() << "]";
            throw DomainError(os.str());
        }
        const double r = std::round((t - t0_) / dt_);
        return std::min(size() - 1, static_cast<std::size_t>(std::max(0.0, r)));
    }

    [[nodiscard]] bool on_grid(double t) const {
        if (!covers(t)) return false;
        return std::abs(time(index_of(t)) - t) <= 1e-7 * dt_;
    }

    /// Linear interpolant at t, constant outside the span (0 before t0).
    [[nodiscard]] Vec interpolate(double t) const {
        if (t <= t0_) return Vec::Zero(dim_);
        if (t >= end_time()) return at(size() - 1);
        const double s = (t - t0_) / dt_;
        const auto i = std::min(size() - 2, static_cast<std::size_t>(std::floor(s)));
        const double w = s - static_cast<double>(i);
        return (1.0 - w) * at(i) + w * at(i + 1);
    }

    friend bool operator==(const DiscretePath& a, const DiscretePath& b) {
        return a.t0_ == b.t0_ && a.dt_ == b.dt_ && a.dim_ == b.dim_ && a.values_ == b.values_;
    }

private:
    double t0_ = 0.0;
    double dt_ = 1.0;
    int dim_ = 1;
    std::vector<double> values_{0.0};
};

/// (t, omega): consumers ignore path values after t.
struct PathPoint {
    double t;
    const DiscretePath& path;
};

struct LevelCascade {
    double alpha = 0.0;
    double t_start = 0.0;
    double dt = 0.0;
    std::vector<double> times;
    std::vector<std::size_t> indices;  // relative to the path the cascade was computed on
    std::vector<Vec> increments;
};

/// Skeleton pi_n = {(t_i, x_i)}.
struct SkeletonKnot {
    double t;
    Vec x;
};
using Skeleton = std::vector<SkeletonKnot>;

inline DiscretePath stop(const DiscretePath& p, double t) {
    const std::size_t k = p.index_of(t);
    std::vector<double> v = p.raw();
    const auto d = static_cast<std::size_t>(p.dim());
    for (std::size_t i = k + 1; i < p.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) v[i * d + c] = v[k * d + c];
    return {p.t0(), p.dt(), p.dim(), std::move(v)};
}

/// Restriction to [t0, t].
inline DiscretePath truncate(const DiscretePath& p, double t) {
    const std::size_t k = p.index_of(t);
    const auto d = static_cast<std::size_t>(p.dim());
    std::vector<double> v(p.raw().begin(), p.raw().begin() + static_cast<std::ptrdiff_t>((k + 1) * d));
    return {p.t0(), p.dt(), p.dim(), std::move(v)};
}

inline DiscretePath concat(const DiscretePath& left, const DiscretePath& right) {
    if (left.dim() != right.dim()) throw DomainError("concat: dimension mismatch");
    if (std::abs(left.dt() - right.dt()) > 1e-12 * left.dt()) throw DomainError("concat: step mismatch");
    if (std::abs(left.end_time() - right.t0()) > 1e-7 * left.dt())
        throw DomainError("concat: right path must start where left path ends");
    const auto d = static_cast<std::size_t>(left.dim());
    std::vector<double> v = left.raw();
    v.reserve((left.size() + right.size() - 1) * d);
    const std::size_t last = left.size() - 1;
    for (std::size_t i = 1; i < right.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) v.push_back(left.raw()[last * d + c] + right.raw()[i * d + c]);
    return {left.t0(), left.dt(), left.dim(), std::move(v)};
}

inline DiscretePath shift(const DiscretePath& p, double t) {
    if (!p.on_grid(t)) throw DomainError("shift: time is not on the path grid");
    const std::size_t k = p.index_of(t);
    const auto d = static_cast<std::size_t>(p.dim());
    std::vector<double> v((p.size() - k) * d);
    for (std::size_t i = k; i < p.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) v[(i - k) * d + c] = p.raw()[i * d + c] - p.raw()[k * d + c];
    return {t, p.dt(), p.dim(), std::move(v)};
}

/// d_inf((t,w),(t',w')) = |t - t'| + sup_s |w(s ^ t) - w'(s ^ t')|, exact for linear interpolants.
inline double dist_dinfty(const PathPoint& a, const PathPoint& b) {
    if (a.path.dim() != b.path.dim()) throw DomainError("dist_dinfty: dimension mismatch");
    auto stopped = [](const PathPoint& p, double s) { return p.path.interpolate(std::min(s, p.t)); };
    std::vector<double> knots{a.t, b.t, a.path.t0(), b.path.t0()};
    const double hi = std::max(a.t, b.t);
    for (const PathPoint* p : {&a, &b})
        for (std::size_t i = 0; i < p->path.size() && p->path.time(i) <= hi; ++i) knots.push_back(p->path.time(i));
    double sup = 0.0;
    for (double s : knots)
        if (s <= hi) sup = std::max(sup, (stopped(a, s) - stopped(b, s)).norm());
    return std::abs(a.t - b.t) + sup;
}

/// Norm-hitting time of level delta, capped at (t + delta) ^ T; path starts at t.
inline double hitting_time_delta(double t, double delta, const DiscretePath& path, double T) {
    if (!(delta > 0.0)) throw DomainError("hitting_time_delta: delta must be positive");
    if (std::abs(path.t0() - t) > 1e-7 * path.dt()) throw DomainError("hitting_time_delta: path must start at t");
    const double dt = path.dt();
    const std::size_t last = path.index_of(std::min(T, path.end_time()));
    std::size_t cap = static_cast<std::size_t>(std::max(1.0, std::round((std::min(t + delta, T) - t) / dt)));
    cap = std::min(cap, std::max<std::size_t>(last, 1));
    const double lvl = delta - detail::level_tol(delta);
    for (std::size_t i = 1; i <= cap && i < path.size(); ++i)
        if (path.at(i).norm() >= lvl) return path.time(i);
    return path.time(cap);
}

inline double hitting_time_delta(double t, double delta, const DiscretePath& path) {
    return hitting_time_delta(t, delta, path, path.end_time());
}

/// Successive alpha-oscillation times of x + path, the first capped at (anchor + alpha) ^ T.
inline LevelCascade level_cascade(double t, const Vec& x, double alpha, const DiscretePath& path,
                                  double anchor_time, double T) {
    if (!(alpha > 0.0)) throw DomainError("level_cascade: alpha must be positive");
    if (x.size() != path.dim()) throw DomainError("level_cascade: dimension mismatch");
    if (x.norm() > alpha + detail::level_tol(alpha)) throw DomainError("level_cascade: |x| exceeds alpha");
    if (std::abs(path.t0() - t) > 1e-7 * path.dt()) throw DomainError("level_cascade: path must start at t");
    if (anchor_time > t + detail::kTimeTol) throw DomainError("level_cascade: anchor after start time");
    const double dt = path.dt();
    const std::size_t last = path.index_of(std::min(T, path.end_time()));
    const double lvl = alpha - detail::level_tol(alpha);
    LevelCascade out;
    out.alpha = alpha;
    out.t_start = t;
    out.dt = dt;

    const double cap0_t = std::min(anchor_time + alpha, T);
    auto cap0 = static_cast<std::size_t>(std::max(0.0, std::round((cap0_t - t) / dt)));
    cap0 = std::min(cap0, last);
    std::size_t hit = cap0;
    for (std::size_t i = 0; i <= cap0; ++i)
        if ((x + path.at(i)).norm() >= lvl) { hit = i; break; }
    out.indices.push_back(hit);
    out.increments.emplace_back(x + path.at(hit));

    const auto step = static_cast<std::size_t>(std::max(1.0, std::round(alpha / dt)));
    while (out.indices.back() < last) {
        const std::size_t prev = out.indices.back();
        const std::size_t cap = std::min(prev + step, last);
        std::size_t next = cap;
        for (std::size_t i = prev + 1; i <= cap; ++i)
            if ((path.at(i) - path.at(prev)).norm() >= lvl) { next = i; break; }
        out.indices.push_back(next);
        out.increments.emplace_back(path.at(next) - path.at(prev));
    }
    for (std::size_t i : out.indices) out.times.push_back(path.time(i));
    return out;
}

inline LevelCascade level_cascade(double t, const Vec& x, double alpha, const DiscretePath& path, double anchor_time) {
    return level_cascade(t, x, alpha, path, anchor_time, path.end_time());
}

namespace detail {
/// Piecewise-linear sampling of knots onto [0, T] with step dt; duplicate knot times keep the last value.
inline DiscretePath sample_knots(std::vector<std::pair<double, Vec>> knots, double dt, double T, int dim) {
    const auto n = static_cast<std::size_t>(std::llround(T / dt)) + 1;
    std::vector<double> v(n * static_cast<std::size_t>(dim), 0.0);
    std::vector<std::pair<double, Vec>> k;
    for (auto& kn : knots) {
        if (!k.empty() && std::abs(kn.first - k.back().first) <= 1e-9 * std::max(1.0, dt)) k.back().second = kn.second;
        else k.push_back(std::move(kn));
    }
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = static_cast<double>(i) * dt;
        Vec val;
        if (s <= k.front().first) val = k.front().second;
        else if (s >= k.back().first) val = k.back().second;
        else {
            while (j + 1 < k.size() && k[j + 1].first < s) ++j;
            const double w = (s - k[j].first) / (k[j + 1].first - k[j].first);
            val = (1.0 - w) * k[j].second + w * k[j + 1].second;
        }
        if (i == 0) val.setZero();
        for (int c = 0; c < dim; ++c) v[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(c)] = val(c);
    }
    return {0.0, dt, dim, std::move(v)};
}
}  // namespace detail

/// Interpolation of a skeleton (t_i, sum_{j<=i} x_j), extended constantly to T.
inline DiscretePath skeleton_path(const Skeleton& pi, double dt, double T) {
    if (pi.empty()) throw DomainError("skeleton_path: empty skeleton");
    const int dim = static_cast<int>(pi.front().x.size());
    std::vector<std::pair<double, Vec>> knots;
    Vec s = Vec::Zero(dim);
    for (const auto& kn : pi) {
        s += kn.x;
        knots.emplace_back(kn.t, s);
    }
    return detail::sample_knots(std::move(knots), dt, T, dim);
}

/// Hat path: skeleton knots followed by the cascade knots of (t, x, path) at level alpha.
inline DiscretePath interpolate_hat_path(const Skeleton& pi, double t, const Vec& x, double alpha,
                                         const DiscretePath& path, double T) {
    if (pi.empty()) throw DomainError("interpolate_hat_path: empty skeleton");
    const int dim = static_cast<int>(x.size());
    std::vector<std::pair<double, Vec>> knots;
    Vec s = Vec::Zero(dim);
    for (const auto& kn : pi) {
        s += kn.x;
        knots.emplace_back(kn.t, s);
    }
    const LevelCascade c = level_cascade(t, x, alpha, path, pi.back().t, T);
    for (std::size_t i = 0; i < c.times.size(); ++i)
        knots.emplace_back(c.times[i], s + x + path.at(c.indices[i]));
    return detail::sample_knots(std::move(knots), path.dt(), T, dim);
}

inline DiscretePath interpolate_hat_path(const Skeleton& pi, double t, const Vec& x, double alpha,
                                         const DiscretePath& path) {
    return interpolate_hat_path(pi, t, x, alpha, path, path.end_time());
}

inline void write_csv(std::ostream& os, const DiscretePath& p) {
    os << "time";
    for (int c = 0; c < p.dim(); ++c) os << ",x_" << (c + 1);
    os << '\n' << std::setprecision(17);
    for (std::size_t i = 0; i < p.size(); ++i) {
        os << p.time(i);
        for (int c = 0; c < p.dim(); ++c) os << ',' << p.value(i, c);
        os << '\n';
    }
}

inline DiscretePath read_csv_path(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw DomainError("read_csv_path: empty input");
    const int dim = static_cast<int>(std::count(line.begin(), line.end(), ','));
    if (dim < 1) throw DomainError("read_csv_path: no value columns");
    std::vector<double> times, vals;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        times.push_back(std::stod(cell));
        for (int c = 0; c < dim; ++c) {
            if (!std::getline(ss, cell, ',')) throw DomainError("read_csv_path: short row");
            vals.push_back(std::stod(cell));
        }
    }
    if (times.size() < 2) {
        if (times.size() == 1) return {times[0], 1.0, dim, std::move(vals)};
        throw DomainError("read_csv_path: no rows");
    }
    return {times[0], times[1] - times[0], dim, std::move(vals)};
}

}  // namespace ppde
