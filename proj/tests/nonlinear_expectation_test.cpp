#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ppde/nonlinear_expectation.hpp"
#include "ppde/reference_oracle.hpp"
#include "ppde/rng.hpp"

namespace {

ppde::Lattice custom(double T, std::size_t n, double L, std::vector<ppde::Action> acts) {
    ppde::Lattice lat;
    lat.n_steps = n;
    lat.dt = T / static_cast<double>(n);
    lat.L = L;
    lat.actions = std::move(acts);
    double dx = 0.0;
    for (const auto& a : lat.actions) dx = std::max(dx, ppde::cfl_dx(a.a, a.b, lat.dt));
    lat.dx = dx;
    return lat;
}

/// Small instances shared with the brute-force oracle.
std::vector<ppde::Lattice> small_instances() {
    std::vector<ppde::Lattice> out;
    for (std::size_t n : {1u, 2u, 3u, 4u, 5u}) {
        out.push_back(custom(1.0, n, 0.5, {{0.0, 1.0}}));
        out.push_back(custom(1.0, n, 1.0, {{-1.0, 0.5}, {0.0, 1.0}, {1.0, 0.5}}));
        out.push_back(custom(0.5, n, 0.5, {{0.0, 0.3}, {0.5, 1.0}}));
    }
    return out;
}

}  // namespace

TEST(UpperExpectation, LinearPayoffUsesExtremalDrift) {
    const auto lat = ppde::make_lattice(1.0, 20, 1.0, 0.5);
    EXPECT_NEAR(ppde::upper_expectation(lat, [](double x) { return x; }), 1.0, 1e-12);
    EXPECT_NEAR(ppde::lower_expectation(lat, [](double x) { return x; }), -1.0, 1e-12);
}

TEST(UpperExpectation, ConstantsArePreserved) {
    const auto lat = ppde::make_lattice(1.0, 10, 0.7, 0.4);
    EXPECT_NEAR(ppde::upper_expectation(lat, [](double) { return 2.5; }), 2.5, 1e-13);
    EXPECT_NEAR(ppde::lower_expectation(lat, [](double) { return 2.5; }), 2.5, 1e-13);
}

TEST(UpperExpectation, ZeroDriftSquareMatchesEnumeration) {
    const auto lat = custom(1.0, 3, 0.5, {{0.0, 0.3}, {0.0, 1.0}});
    const auto sq = [](double x) { return x * x; };
    const double dp = ppde::upper_expectation(lat, sq);
    const double bf = ppde::oracle::brute_force_expectation(lat, [&](std::size_t i, double x) { return i == 3 ? sq(x) : 0.0; });
    EXPECT_EQ(dp, bf);
    EXPECT_NEAR(dp, 1.0, 1e-12);
}

TEST(UpperExpectation, CflViolationThrows) {
    auto lat = ppde::make_lattice(1.0, 10, 1.0, 0.5);
    lat.dx *= 0.5;
    EXPECT_THROW(ppde::upper_expectation(lat, [](double x) { return x; }), ppde::ParameterError);
    auto bad = ppde::make_lattice(1.0, 10, 1.0, 0.5);
    bad.actions.push_back({2.0, 0.5});
    EXPECT_THROW(ppde::upper_expectation(bad, [](double x) { return x; }), ppde::ParameterError);
}

TEST(UpperExpectationProperty, DualityAndOrderingOnRandomPayoffs) {
    const auto lat = ppde::make_lattice(1.0, 12, 0.8, 0.5);
    const ppde::Philox4x32 g(4);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto c = g.normals(s, 0, 0);
        auto xi = [&](double x) { return c[0] + c[1] * x + c[2] * x * x + c[3] * std::sin(3 * x); };
        const double up = ppde::upper_expectation(lat, xi);
        const double lo = ppde::lower_expectation(lat, xi);
        EXPECT_EQ(lo, -ppde::upper_expectation(lat, [&](double x) { return -xi(x); }));
        EXPECT_LE(lo, up + 1e-14);
    }
}

TEST(UpperExpectationProperty, MonotoneInL) {
    const ppde::Philox4x32 g(8);
    const std::vector<double> Ls{0.25, 0.5, 1.0, 2.0};
    const double dx = ppde::make_lattice(1.0, 16, Ls.back(), 0.5).dx;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto c = g.normals(s, 1, 0);
        auto xi = [&](double x) { return c[0] * x + c[1] * x * x + c[2] * std::abs(x - c[3]); };
        double prev_up = -1e300, prev_lo = 1e300;
        for (double L : Ls) {
            const auto lat = ppde::make_lattice(1.0, 16, L, 0.5, dx);
            const double up = ppde::upper_expectation(lat, xi), lo = ppde::lower_expectation(lat, xi);
            EXPECT_GE(up, prev_up - 1e-12);
            EXPECT_LE(lo, prev_lo + 1e-12);
            prev_up = up;
            prev_lo = lo;
        }
    }
}

TEST(SnellUpper, IncreasingDeterministicRewardStopsAtHorizon) {
    const auto lat = ppde::make_lattice(1.0, 10, 1.0, 0.5);
    const auto r = ppde::snell_upper(lat, [&](std::size_t i, double) { return lat.time(i); });
    EXPECT_NEAR(r.value, 1.0, 1e-14);
    EXPECT_FALSE(r.stop[0][0]);
    for (std::size_t i = 0; i < 10; ++i)
        for (char s : r.stop[i]) EXPECT_FALSE(s);
}

TEST(SnellUpper, DecreasingDeterministicRewardStopsImmediately) {
    const auto lat = ppde::make_lattice(1.0, 10, 1.0, 0.5);
    const auto r = ppde::snell_upper(lat, [&](std::size_t i, double) { return -lat.time(i); });
    EXPECT_EQ(r.value, 0.0);
    EXPECT_TRUE(r.stop[0][0]);
}

TEST(SnellUpper, AbsoluteValueFourStepsMatchesEnumeration) {
    const auto lat = custom(1.0, 4, 1.0, {{-0.5, 1.0}, {0.0, 0.5}, {0.5, 1.0}});
    auto X = [](std::size_t, double x) { return std::abs(x); };
    EXPECT_EQ(ppde::snell_upper(lat, X).value, ppde::oracle::brute_force_snell(lat, X));
}

TEST(SnellUpperProperty, EqualsBruteForceOnAllSmallInstances) {
    const ppde::Philox4x32 g(12);
    std::uint64_t s = 0;
    for (const auto& lat : small_instances()) {
        for (int rep = 0; rep < 3; ++rep, ++s) {
            const auto c = g.normals(s, 0, 0);
            auto X = [&](std::size_t i, double x) {
                return c[0] * std::abs(x) + c[1] * x + c[2] * static_cast<double>(i) * lat.dt + c[3] * x * x;
            };
            const double dp = ppde::snell_upper(lat, X).value;
            const double bf = ppde::oracle::brute_force_snell(lat, X);
            EXPECT_NEAR(dp, bf, 1e-14 * (1.0 + std::abs(bf)));
        }
    }
}

TEST(SnellUpperProperty, SupermartingaleAndMartingaleToTau) {
    for (const auto& lat : small_instances()) {
        const auto r = ppde::snell_upper(lat, [](std::size_t, double x) { return std::abs(x) - 0.3 * x * x; });
        const auto c = ppde::snell_check(lat, r);
        EXPECT_GE(c.dominance, 0.0);
        EXPECT_LE(c.supermartingale, 0.0);
        EXPECT_EQ(c.martingale_to_tau, 0.0);
    }
    const auto big = ppde::make_lattice(1.0, 60, 1.0, 0.5);
    const auto r = ppde::snell_upper(big, [](std::size_t i, double x) { return std::max(0.2 - x, 0.0) * (1.0 + 0.01 * i); });
    const auto c = ppde::snell_check(big, r);
    EXPECT_GE(c.dominance, 0.0);
    EXPECT_LE(c.supermartingale, 0.0);
    EXPECT_EQ(c.martingale_to_tau, 0.0);
}

TEST(SnellUpper, CsvHasOneRowPerNode) {
    const auto lat = ppde::make_lattice(1.0, 3, 1.0, 0.5);
    const auto r = ppde::snell_upper(lat, [](std::size_t, double x) { return x; });
    std::ostringstream os;
    ppde::write_csv(os, lat, r);
    const auto s = os.str();
    EXPECT_EQ(static_cast<int>(std::count(s.begin(), s.end(), '\n')), 1 + 1 + 3 + 5 + 7);
}

TEST(PositiveHitting, CapBindsForSmallL) {
    const auto lat = ppde::make_lattice(1.0, 10, 0.01, 0.1);
    EXPECT_NEAR(ppde::positive_hitting_check(lat, 1.0), 1.0, 1e-14);
}

TEST(PositiveHitting, MatchesEnumerationOnThreeSteps) {
    const auto lat = custom(1.0, 3, 1.0, {{-1.0, 0.5}, {0.0, std::sqrt(2.0)}, {1.0, 0.5}});
    const double delta = 0.2;
    const double v = ppde::positive_hitting_check(lat, delta);
    const std::size_t cap = ppde::hitting_cap_step(lat, delta);
    const double bf = ppde::oracle::brute_force_expectation(
        lat, [&](std::size_t i, double) { return lat.time(i); }, false,
        [&](std::size_t i, double x) { return std::abs(x) >= delta - 1e-12 || i >= cap; });
    EXPECT_GT(v, 0.0);
    EXPECT_NEAR(v, bf, 1e-15);
}

TEST(PositiveHittingProperty, NonincreasingInL) {
    for (double delta : {0.1, 0.2, 0.5}) {
        const std::vector<double> Ls{0.25, 0.5, 1.0, 2.0};
        const double dx = ppde::make_lattice(1.0, 200, Ls.back(), 0.5).dx;
        double prev = 1e300;
        for (double L : Ls) {
            const double v = ppde::positive_hitting_check(ppde::make_lattice(1.0, 200, L, 0.5, dx), delta);
            EXPECT_GT(v, 0.0);
            EXPECT_LE(v, prev + 1e-14);
            prev = v;
        }
    }
}

TEST(TestMembership, IdenticalFunctionsHaveZeroMargin) {
    const ppde::TestFunctional phi = ppde::TestFunctional::x_squared_minus_t();
    ppde::MembershipOptions o;
    const auto rep = ppde::test_membership([&](std::size_t i, double x) { return phi.value(0.2 + i * 0.3 / 20, x); }, phi, 0.2,
                                           0.3, 1.0, o);
    EXPECT_NEAR(rep.margin, 0.0, 1e-12);
    EXPECT_TRUE(rep.member);
}

TEST(TestMembership, DominatingFunctionalIsLowerMember) {
    const ppde::TestFunctional phi = ppde::TestFunctional::x_squared_minus_t();
    const double eps = 0.1, t = 0.2, delta = 0.3;
    ppde::MembershipOptions o;
    const double dt = std::min(delta, 1.0 - t) / static_cast<double>(o.n_steps);
    auto u = [&](std::size_t i, double x) { return phi.value(t + i * dt, x) - eps * i * dt; };
    const auto rep = ppde::test_membership(u, phi, t, delta, 1.0, o);
    EXPECT_GE(rep.margin, 0.0);
    EXPECT_TRUE(rep.member);
    o.lower = false;
    EXPECT_FALSE(ppde::test_membership(u, phi, t, delta, 1.0, o).member);
}

TEST(TestMembership, MisalignedThrows) {
    const ppde::TestFunctional phi = ppde::TestFunctional::x_squared_minus_t();
    EXPECT_THROW(ppde::test_membership([](std::size_t, double) { return 5.0; }, phi, 0.0, 0.2, 1.0), ppde::DomainError);
}

TEST(LatticeRefinement, ReportsValuesPerStepCount) {
    const auto tab = ppde::upper_expectation_refinement([](double x) { return x * x; }, 1.0, 0.5, 0.5, {50, 100, 200, 400});
    ASSERT_EQ(tab.size(), 4u);
    for (const auto& [n, v] : tab) EXPECT_GT(v, 1.0) << n;
    EXPECT_LT(std::abs(tab[3].second - tab[2].second), std::abs(tab[1].second - tab[0].second));
}
