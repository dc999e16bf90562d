#include <gtest/gtest.h>

#include <cmath>

#include "ppde/families.hpp"
#include "ppde/model.hpp"
#include "ppde/rbsde_solver.hpp"

namespace {

using ppde::DiscretePath;
using ppde::Mat;
using ppde::PathPoint;
using ppde::Vec;

ppde::ProblemData scalar_problem(std::vector<double> sigmas) {
    auto cfg = ppde::named_instance("quadratic_martingale");
    cfg["sigma"] = sigmas;
    cfg["c0"] = *std::min_element(sigmas.begin(), sigmas.end());
    return ppde::problem_from_json(cfg);
}

Mat m1(double v) { return Mat::Constant(1, 1, v); }
Vec v1(double v) { return Vec::Constant(1, v); }

}  // namespace

TEST(GeneratorG, SingletonUnitVolatility) {
    const auto data = scalar_problem({1.0});
    const auto z = DiscretePath::zeros(0.0, 0.1, 1, 11);
    const auto g = ppde::generator_G(data, PathPoint{0.5, z}, 0.0, v1(0.0), m1(2.0));
    EXPECT_DOUBLE_EQ(g.value, 1.0);
    EXPECT_EQ(g.argmax, 0);
}

TEST(GeneratorG, TwoVolatilitiesPickTheMaximizer) {
    const auto data = scalar_problem({0.5, 1.0});
    const auto z = DiscretePath::zeros(0.0, 0.1, 1, 11);
    const auto up = ppde::generator_G(data, PathPoint{0.5, z}, 0.0, v1(0.0), m1(2.0));
    EXPECT_DOUBLE_EQ(up.value, 1.0);
    EXPECT_EQ(up.argmax, 1);
    const auto down = ppde::generator_G(data, PathPoint{0.5, z}, 0.0, v1(0.0), m1(-2.0));
    EXPECT_DOUBLE_EQ(down.value, -0.25);
    EXPECT_EQ(down.argmax, 0);
}

TEST(GeneratorG, TiesGoToLowestIndex) {
    const auto data = scalar_problem({1.0, 1.0, 0.5});
    const auto z = DiscretePath::zeros(0.0, 0.1, 1, 11);
    EXPECT_EQ(ppde::generator_G(data, PathPoint{0.5, z}, 0.0, v1(0.0), m1(2.0)).argmax, 0);
    EXPECT_EQ(ppde::generator_G(data, PathPoint{0.5, z}, 0.0, v1(0.0), m1(0.0)).argmax, 0);
}

TEST(GeneratorGProperty, MonotoneInGammaAndConvex) {
    auto cfg = ppde::named_instance("quadratic_martingale");
    cfg["d"] = 2;
    cfg["sigma"] = {{{1.0, 0.2}, {0.2, 0.8}}, {{0.6, 0.0}, {0.0, 1.0}}, {{0.9, -0.1}, {-0.1, 0.5}}};
    cfg["L0"] = 1.0;
    cfg["F"] = {{"family", "linear_y"}, {"rate", 0.3}, {"value", 0.1}};
    const auto data = ppde::problem_from_json(cfg);
    const auto w = DiscretePath::zeros(0.0, 0.1, 2, 11);
    const PathPoint p{0.3, w};
    ppde::Philox4x32 g(3);
    for (std::uint64_t s = 0; s < 500; ++s) {
        const auto a = g.normals(s, 0, 0), b = g.normals(s, 1, 0), c = g.normals(s, 2, 0);
        Mat g1(2, 2);
        g1 << a[0], a[1], a[1], a[2];
        Mat q(2, 2);
        q << b[0], b[1], b[2], b[3];
        const Mat psd = q * q.transpose();
        const Vec z = Vec{{c[0], c[1]}};
        EXPECT_LE(ppde::generator_G(data, p, 0.2, z, g1).value, ppde::generator_G(data, p, 0.2, z, g1 + psd).value + 1e-12);
        Mat g2(2, 2);
        g2 << c[2], c[3], c[3], a[3];
        const Vec z2 = Vec{{b[0], a[2]}};
        const double mid = ppde::generator_G(data, p, 0.2, 0.5 * (z + z2), 0.5 * (g1 + g2)).value;
        const double avg = 0.5 * (ppde::generator_G(data, p, 0.2, z, g1).value + ppde::generator_G(data, p, 0.2, z2, g2).value);
        EXPECT_LE(mid, avg + 1e-12);
    }
}

TEST(OperatorL, Examples) {
    const auto data = scalar_problem({1.0});
    const auto w = DiscretePath::zeros(0.0, 0.1, 1, 11);
    Mat ct = Mat::Zero(2, 1);
    ct(1, 0) = 1.0;
    EXPECT_DOUBLE_EQ(ppde::operator_L(data, ppde::TestFunctional(ct), PathPoint{0.4, w}), -1.0);
    Mat cx = Mat::Zero(1, 3);
    cx(0, 2) = 1.0;
    EXPECT_DOUBLE_EQ(ppde::operator_L(data, ppde::TestFunctional(cx), PathPoint{0.4, w}), -1.0);
    EXPECT_DOUBLE_EQ(ppde::operator_L(data, ppde::TestFunctional::x_squared_minus_t(), PathPoint{0.4, w}), 0.0);
}

TEST(OperatorLProperty, HeatSolutionVanishesOnGrid) {
    const auto data = scalar_problem({1.0});
    const auto phi = ppde::TestFunctional::x_squared_minus_t();
    ppde::Philox4x32 g(5);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto w = ppde::probe_path(data, g, s, 40, 1.0);
        for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(ppde::operator_L(data, phi, PathPoint{w.time(i), w}), 0.0, 1e-12);
    }
}

TEST(TestFunctionalProperty, FunctionalItoIdentityOnSimulatedPaths) {
    // phi(T, X_T) - phi(0, 0) = sum [d_t phi dt + d_x phi dX + 1/2 d_xx phi dX^2] up to O(dt) per path
    Mat c = Mat::Zero(2, 5);
    c(0, 4) = 0.3;
    c(1, 2) = -0.7;
    c(0, 1) = 1.1;
    c(1, 0) = 0.4;
    const ppde::TestFunctional phi(c);
    ppde::Philox4x32 g(17);
    const int n = 4000;
    const double dt = 1.0 / n;
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        double x = 0.0, acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double t = i * dt;
            const double dx = std::sqrt(dt) * g.normals(s, static_cast<std::uint32_t>(i), 0)[0];
            acc += phi.dt(t, x) * dt + phi.dx(t, x) * dx + 0.5 * phi.dxx(t, x) * dx * dx;
            x += dx;
        }
        worst = std::max(worst, std::abs(phi.value(1.0, x) - phi.value(0.0, 0.0) - acc));
    }
    EXPECT_LT(worst, 0.1);
}

TEST(ChangeOfVariable, ZeroParametersAreIdentity) {
    const auto data = ppde::named_problem("abs_stopping_active");
    const auto tr = ppde::change_of_variable(data, 0.0, 0.0, 0.0);
    ppde::Philox4x32 g(1);
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto w = ppde::probe_path(data, g, s, 20, 1.0);
        const auto u = g.uniforms(s, 9, 9);
        const PathPoint p{w.time(static_cast<std::size_t>(u[0] * 20)), w};
        const Vec z = v1(4.0 * u[2] - 2.0);
        EXPECT_DOUBLE_EQ(tr.F(p, u[1], z, 0), data.F(p, u[1], z, 0));
        EXPECT_DOUBLE_EQ(tr.h(p), data.h(p));
        EXPECT_DOUBLE_EQ(tr.xi(w), data.xi(w));
    }
}

TEST(ChangeOfVariable, ExponentialScalingOfTerminalAndBarrier) {
    const auto data = ppde::named_problem("abs_stopping");
    const auto tr = ppde::change_of_variable(data, 1.0, 0.0, 0.0);
    ppde::Philox4x32 g(2);
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto w = ppde::probe_path(data, g, s, 20, 1.0);
        const PathPoint p{w.time(s % 21), w};
        EXPECT_NEAR(tr.xi(w), std::exp(1.0) * data.xi(w), 1e-12);
        EXPECT_NEAR(tr.h(p), std::exp(p.t) * data.h(p), 1e-12);
    }
}

TEST(ChangeOfVariableProperty, StandardConstantsGiveMonotonicityGaps) {
    for (const char* name : {"abs_stopping_active", "american_put", "quadratic_martingale"}) {
        const auto data = ppde::named_problem(name);
        const auto cv = ppde::ChangeOfVariable::standard(data);
        const auto tr = ppde::change_of_variable(data, cv);
        ppde::Philox4x32 g(3);
        for (std::uint64_t s = 0; s < 1000; ++s) {
            const auto w = ppde::probe_path(data, g, s, 20, 1.0);
            const auto u = g.uniforms(s, 5, 5);
            const PathPoint p{w.time(static_cast<std::size_t>(u[0] * 21) % 21), w};
            const double y = (2.0 * u[1] - 1.0) * tr.M0;
            const double delta = 10.0 * u[2];
            const Vec z = v1(2.0 * u[3] - 1.0);
            const int k = static_cast<int>(s % static_cast<std::uint64_t>(data.n_controls()));
            EXPECT_LE(tr.F(p, y + delta, z, k) + delta, tr.F(p, y, z, k) + 1e-9 * (1.0 + std::abs(y))) << name;
            EXPECT_GE(tr.F(p, tr.h(p), Vec::Zero(1), k), 0.0) << name;
        }
    }
}

TEST(Validate, CompliantAmericanPutPasses) {
    const auto rep = ppde::validate(ppde::named_problem("american_put"), 500, 1);
    for (const auto& c : rep.clauses) EXPECT_TRUE(c.passed) << c.name << " worst " << c.worst;
    EXPECT_TRUE(rep.all_passed());
}

TEST(Validate, ZeroVolatilityFailsNondegeneracy) {
    auto cfg = ppde::named_instance("quadratic_martingale");
    cfg["sigma"] = {0.0};
    cfg["c0"] = 0.0;
    const auto rep = ppde::validate(ppde::problem_from_json(cfg), 100, 1);
    EXPECT_FALSE(rep.clause("nondegenerate").passed);
    EXPECT_FALSE(rep.all_passed());
}

TEST(Validate, SteepDriverFailsLipschitz) {
    auto cfg = ppde::named_instance("quadratic_martingale");
    cfg["F"] = {{"family", "linear_y"}, {"rate", -1.5}};  // F = (L0 + 1) y
    const auto rep = ppde::validate(ppde::problem_from_json(cfg), 200, 1);
    EXPECT_FALSE(rep.clause("lipschitz_F").passed);
    EXPECT_TRUE(rep.clause("nondegenerate").passed);
}

TEST(Validate, AllNamedInstancesComply) {
    for (const char* name : {"quadratic_martingale", "linear_terminal", "abs_stopping", "abs_stopping_active",
                             "two_vol_square", "two_vol_neg_square", "american_put", "running_max"}) {
        const auto rep = ppde::validate(ppde::named_problem(name), 300, 4);
        for (const auto& c : rep.clauses) EXPECT_TRUE(c.passed) << name << ": " << c.name << " worst " << c.worst;
    }
}

TEST(ValueBound, FormulaFromConstants) {
    auto data = ppde::named_problem("abs_stopping");
    EXPECT_NEAR(ppde::value_bound(data), std::exp(0.5) * 10.0 * 2.0, 1e-12);
}

TEST(Families, UnknownFamilyThrows) {
    auto cfg = ppde::named_instance("quadratic_martingale");
    cfg["xi"] = {{"family", "cubic"}};
    EXPECT_THROW(ppde::problem_from_json(cfg), ppde::DomainError);
    EXPECT_THROW(ppde::named_instance("nope"), ppde::DomainError);
}
