#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ppde/errors.hpp"
#include "ppde/path_space.hpp"
#include "ppde/rng.hpp"

namespace ppde {

using Driver = std::function<double(const PathPoint&, double y, const Vec& z, int k)>;
using Barrier = std::function<double(const PathPoint&)>;
using Terminal = std::function<double(const DiscretePath&)>;

/// rho(r) = c r^beta + c r.
struct Modulus {
    double c = 1.0;
    double beta = 0.5;
    [[nodiscard]] double operator()(double r) const { return r <= 0.0 ? 0.0 : c * std::pow(r, beta) + c * r; }
};

/// How F, h, xi read the path; lets solvers pick a reduced state.
enum class PathDependence { current_value, running_extrema, general };

struct ProblemData {
    std::string name = "problem";
    int d = 1;
    double T = 1.0;
    std::vector<Mat> sigma;  // one symmetric matrix per control
    Driver F;
    Barrier h;
    Terminal xi;
    double M0 = 1.0;
    double L0 = 0.5;
    Modulus rho0{};
    double c0 = 1.0;
    PathDependence dependence = PathDependence::general;

    [[nodiscard]] int n_controls() const { return static_cast<int>(sigma.size()); }

    [[nodiscard]] double sigma_max() const {
        double s = 0.0;
        for (const auto& m : sigma) s = std::max(s, m.operatorNorm());
        return s;
    }

    /// sigma entry for d = 1.
    [[nodiscard]] double sigma_scalar(int k) const { return sigma[static_cast<std::size_t>(k)](0, 0); }
};

/// Bound on |u0| from M0, L0, T.
inline double value_bound(const ProblemData& data) {
    return std::exp(data.L0 * data.T) * data.M0 * (1.0 + data.T);
}

/// Current value of the path at p.t.
inline Vec state_at(const PathPoint& p) { return p.path.interpolate(p.t); }

inline double state_at_scalar(const PathPoint& p) { return p.path.interpolate(p.t)(0); }

/// Running max / min of the first coordinate over grid points up to p.t.
inline std::pair<double, double> running_extrema(const PathPoint& p) {
    const std::size_t last = p.path.index_of(std::clamp(p.t, p.path.t0(), p.path.end_time()));
    double hi = 0.0, lo = 0.0;
    for (std::size_t i = 0; i <= last; ++i) {
        hi = std::max(hi, p.path.value(i));
        lo = std::min(lo, p.path.value(i));
    }
    const double x = state_at_scalar(p);
    return {std::max(hi, x), std::min(lo, x)};
}

/// Two-point path whose value at t is x, for consumers reading only the current value.
inline DiscretePath point_path(double t, const Vec& x, double dt = 1e-3) {
    std::vector<double> v(2 * static_cast<std::size_t>(x.size()), 0.0);
    for (Eigen::Index c = 0; c < x.size(); ++c) v[static_cast<std::size_t>(x.size() + c)] = x(c);
    return {t - dt, dt, static_cast<int>(x.size()), std::move(v)};
}

inline DiscretePath point_path(double t, double x, double dt = 1e-3) {
    return {t - dt, dt, 1, std::vector<double>{0.0, x}};
}

struct GeneratorValue {
    double value;
    int argmax;
};

/// G = max_k 1/2 sigma(k)^2 : gamma + F(p, y, sigma(k) z, k); ties go to the lowest index.
inline GeneratorValue generator_G(const ProblemData& data, const PathPoint& p, double y, const Vec& z,
                                  const Mat& gamma) {
    GeneratorValue best{-std::numeric_limits<double>::infinity(), -1};
    for (int k = 0; k < data.n_controls(); ++k) {
        const Mat& s = data.sigma[static_cast<std::size_t>(k)];
        const double v = 0.5 * (s * s.transpose()).cwiseProduct(gamma).sum() + data.F(p, y, s * z, k);
        if (v > best.value) best = {v, k};
    }
    return best;
}

/// phi(t, x) = sum_ij c_ij t^i x^j on d = 1, evaluated at the current value of the path.
class TestFunctional {
public:
    TestFunctional() : c_(Mat::Zero(1, 1)) {}
    /// coeffs(i, j) multiplies t^i x^j; at most 5 columns (degree <= 4 in x).
    explicit TestFunctional(Mat coeffs) : c_(std::move(coeffs)) {
        if (c_.cols() > 5) throw DomainError("TestFunctional: degree in x must be <= 4");
    }

    static TestFunctional x_squared_minus_t() {
        Mat c = Mat::Zero(2, 3);
        c(0, 2) = 1.0;
        c(1, 0) = -1.0;
        return TestFunctional(c);
    }

    [[nodiscard]] double value(double t, double x) const { return eval(t, x, 0, 0); }
    [[nodiscard]] double dt(double t, double x) const { return eval(t, x, 1, 0); }
    [[nodiscard]] double dx(double t, double x) const { return eval(t, x, 0, 1); }
    [[nodiscard]] double dxx(double t, double x) const { return eval(t, x, 0, 2); }

    [[nodiscard]] double value(const PathPoint& p) const { return value(p.t, state_at_scalar(p)); }

    /// Shifted by a constant so that phi(t, x) = target.
    [[nodiscard]] TestFunctional aligned(double t, double x, double target) const {
        Mat c = c_;
        c(0, 0) += target - value(t, x);
        return TestFunctional(c);
    }

    [[nodiscard]] const Mat& coeffs() const { return c_; }

private:
    static double falling(int n, int k) {
        double r = 1.0;
        for (int i = 0; i < k; ++i) r *= n - i;
        return r;
    }

    [[nodiscard]] double eval(double t, double x, int dt_order, int dx_order) const {
        double s = 0.0;
        for (Eigen::Index i = dt_order; i < c_.rows(); ++i)
            for (Eigen::Index j = dx_order; j < c_.cols(); ++j) {
                if (c_(i, j) == 0.0) continue;
                s += c_(i, j) * falling(static_cast<int>(i), dt_order) * falling(static_cast<int>(j), dx_order) *
                     std::pow(t, static_cast<double>(i - dt_order)) * std::pow(x, static_cast<double>(j - dx_order));
            }
        return s;
    }

    Mat c_;
};

/// L phi = -d_t phi - G(p, phi, d_x phi, d_xx phi); d = 1.
inline double operator_L(const ProblemData& data, const TestFunctional& phi, const PathPoint& p) {
    if (data.d != 1) throw DomainError("operator_L: test functionals are one-dimensional");
    const double t = p.t;
    const double x = state_at_scalar(p);
    Vec z(1);
    z(0) = phi.dx(t, x);
    Mat g(1, 1);
    g(0, 0) = phi.dxx(t, x);
    return -phi.dt(t, x) - generator_G(data, p, phi.value(t, x), z, g).value;
}

struct ChangeOfVariable {
    double lambda = 0.0;
    double mu = 0.0;
    double C = 0.0;

    /// u' = e^{lambda t} u + C e^{mu t} t
    [[nodiscard]] double forward(double t, double u) const {
        return std::exp(lambda * t) * u + C * std::exp(mu * t) * t;
    }
    /// u = e^{-lambda t} (u' - C e^{mu t} t)
    [[nodiscard]] double back(double t, double u_prime) const {
        return std::exp(-lambda * t) * (u_prime - C * std::exp(mu * t) * t);
    }

    /// lambda = L0 + 1, mu = 0, C = -2 e^{(L0+1) T} (lambda + 1)(M0 + 1).
    static ChangeOfVariable standard(const ProblemData& data) {
        ChangeOfVariable c;
        c.lambda = data.L0 + 1.0;
        c.mu = 0.0;
        c.C = -2.0 * std::exp((data.L0 + 1.0) * data.T) * (c.lambda + 1.0) * (data.M0 + 1.0);
        return c;
    }
};

/// Data of u' = e^{lambda t} u + C e^{mu t} t.
inline ProblemData change_of_variable(const ProblemData& data, double lambda, double mu, double C) {
    const ChangeOfVariable cv{lambda, mu, C};
    ProblemData out = data;
    out.name = data.name + "_transformed";
    const auto base = std::make_shared<const ProblemData>(data);
    out.F = [base, cv](const PathPoint& p, double y, const Vec& z, int k) {
        const double t = p.t;
        const double el = std::exp(cv.lambda * t);
        const double em = std::exp(cv.mu * t);
        const double y0 = (y - cv.C * em * t) / el;
        return el * base->F(p, y0, z / el, k) - cv.C * em * (1.0 + (cv.mu - cv.lambda) * t) - cv.lambda * y;
    };
    out.h = [base, cv](const PathPoint& p) { return cv.forward(p.t, base->h(p)); };
    const double T = data.T;
    out.xi = [base, cv, T](const DiscretePath& w) { return cv.forward(T, base->xi(w)); };
    out.L0 = data.L0 + std::abs(lambda);
    const double el = std::exp(std::abs(lambda) * T);
    const double em = std::exp(std::abs(mu) * T);
    const double eml = std::exp(std::abs(mu - lambda) * T);
    const double m_xi = el * data.M0 + std::abs(C) * em * T;
    const double m_f = el * (data.M0 + data.L0 * std::abs(C) * eml * T) + std::abs(C) * em * (1.0 + std::abs(mu - lambda) * T);
    out.M0 = std::max(m_xi, m_f);
    out.rho0 = Modulus{data.rho0.c * el, data.rho0.beta};
    return out;
}

inline ProblemData change_of_variable(const ProblemData& data, const ChangeOfVariable& cv) {
    return change_of_variable(data, cv.lambda, cv.mu, cv.C);
}

struct ValidationClause {
    std::string name;
    bool passed = true;
    double worst = 0.0;  // largest observed violation (<= 0 when passed)
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationClause> clauses;
    [[nodiscard]] bool all_passed() const {
        return std::all_of(clauses.begin(), clauses.end(), [](const auto& c) { return c.passed; });
    }
    [[nodiscard]] const ValidationClause& clause(const std::string& name) const {
        for (const auto& c : clauses)
            if (c.name == name) return c;
        throw DomainError("no validation clause named " + name);
    }
};

/// Random Brownian probe path on [0, T] with n steps.
inline DiscretePath probe_path(const ProblemData& data, const Philox4x32& gen, std::uint64_t id, int n_steps,
                               double scale) {
    const double dt = data.T / n_steps;
    const auto d = static_cast<std::size_t>(data.d);
    std::vector<double> v((static_cast<std::size_t>(n_steps) + 1) * d, 0.0);
    for (int i = 1; i <= n_steps; ++i)
        for (std::size_t c = 0; c < d; ++c) {
            const double z = gen.normals(id, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(c / 4))[c % 4];
            v[static_cast<std::size_t>(i) * d + c] = v[static_cast<std::size_t>(i - 1) * d + c] + scale * std::sqrt(dt) * z;
        }
    return {0.0, dt, data.d, std::move(v)};
}

/// Empirical check of the standing assumptions on sampled probes.
inline ValidationReport validate(const ProblemData& data, int probes, std::uint64_t seed) {
    ValidationReport rep;
    const Philox4x32 gen(seed);
    constexpr double tol = 1e-9;
    const int n_steps = 20;
    auto clause = [&](const std::string& name, double worst, const std::string& detail) {
        rep.clauses.push_back({name, worst <= tol, worst, detail});
    };

    double w_xi = -1e300, w_h = -1e300, w_f = -1e300, w_lip = -1e300, w_term = -1e300;
    for (int p = 0; p < probes; ++p) {
        const auto id = static_cast<std::uint64_t>(p);
        const double scale = 0.5 + 2.0 * gen.uniforms(id, 1u << 20, 0)[0];
        const DiscretePath w = probe_path(data, gen, id, n_steps, scale);
        const auto u = gen.uniforms(id, 1u << 21, 0);
        const auto u2 = gen.uniforms(id, 1u << 21, 1);
        const double t = w.time(std::min<std::size_t>(w.size() - 1, static_cast<std::size_t>(u[0] * n_steps)));
        const PathPoint pt{t, w};
        const double xi = data.xi(w);
        w_xi = std::max(w_xi, std::abs(xi) - data.M0);
        w_h = std::max(w_h, std::abs(data.h(pt)) - data.M0);
        w_term = std::max(w_term, data.h(PathPoint{data.T, w}) - xi);
        const Vec z0 = Vec::Zero(data.d);
        const double span = data.M0 + 1.0;
        for (int k = 0; k < data.n_controls(); ++k) {
            w_f = std::max(w_f, std::abs(data.F(pt, 0.0, z0, k)) - data.M0);
            const double y1 = span * (2.0 * u[1] - 1.0);
            const double y2 = span * (2.0 * u[2] - 1.0);
            Vec z1(data.d), z2(data.d);
            for (int c = 0; c < data.d; ++c) {
                z1(c) = span * (2.0 * gen.uniforms(id, 1u << 22, static_cast<std::uint32_t>(c))[0] - 1.0);
                z2(c) = span * (2.0 * gen.uniforms(id, 1u << 22, static_cast<std::uint32_t>(c))[1] - 1.0);
            }
            if (u2[0] < 0.5) z2 = z1;
            const double lhs = std::abs(data.F(pt, y1, z1, k) - data.F(pt, y2, z2, k));
            const double rhs = data.L0 * (std::abs(y1 - y2) + (z1 - z2).norm());
            w_lip = std::max(w_lip, lhs - rhs - 1e-9 * (1.0 + std::abs(lhs)));
        }
    }
    clause("bounded_xi", w_xi, "|xi| <= M0");
    clause("bounded_h", w_h, "|h| <= M0");
    clause("bounded_F0", w_f, "|F(., 0, 0, k)| <= M0");
    clause("lipschitz_F", w_lip, "|F(y1,z1) - F(y2,z2)| <= L0 (|dy| + |dz|)");
    clause("terminal_dominates_barrier", w_term, "xi >= h(T, .)");

    double w_sym = -1e300, w_nd = -1e300, w_norm = -1e300, w_dim = -1e300;
    if (data.sigma.empty()) w_dim = 1.0;
    if (!(data.c0 > 0.0)) w_nd = 1.0;
    for (const auto& s : data.sigma) {
        if (s.rows() != data.d || s.cols() != data.d) {
            w_dim = 1.0;
            continue;
        }
        w_sym = std::max(w_sym, (s - s.transpose()).cwiseAbs().maxCoeff());
        const Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (s + s.transpose()));
        w_nd = std::max(w_nd, data.c0 - es.eigenvalues().minCoeff());
        w_nd = std::max(w_nd, -es.eigenvalues().minCoeff());
        w_norm = std::max(w_norm, s.operatorNorm() - std::sqrt(2.0 * data.L0));
    }
    clause("sigma_shape", w_dim, "at least one control; sigma(k) is d x d");
    clause("sigma_symmetric", w_sym, "sigma(k) symmetric");
    clause("nondegenerate", w_nd, "smallest eigenvalue of sigma(k) >= c0 > 0");
    clause("sigma_bounded", w_norm, "|sigma(k)| <= sqrt(2 L0)");
    return rep;
}

}  // namespace ppde
