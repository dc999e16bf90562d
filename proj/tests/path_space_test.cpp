#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ppde/path_space.hpp"
#include "ppde/rng.hpp"

namespace {

using ppde::DiscretePath;
using ppde::PathPoint;
using ppde::Vec;

DiscretePath linear(double t0, double dt, std::size_t n, double slope) {
    return DiscretePath::from_function(t0, dt, 1, n, [slope](double t) { return Vec::Constant(1, slope * t); });
}

DiscretePath brownian(std::uint64_t id, double dt, std::size_t n, double t0 = 0.0, std::uint64_t seed = 7) {
    ppde::Philox4x32 g(seed);
    std::vector<double> v(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) v[i] = v[i - 1] + std::sqrt(dt) * g.normals(id, static_cast<std::uint32_t>(i), 0)[0];
    return {t0, dt, 1, v};
}

/// Independent forward scan used as the cascade oracle.
std::vector<double> scan_cascade(const DiscretePath& p, double x, double alpha, double anchor, double T) {
    std::vector<double> out;
    const double dt = p.dt();
    const double lvl = alpha - 1e-12 * std::max(1.0, alpha);
    double cap = std::min(anchor + alpha, T);
    std::size_t i = 0;
    for (;; ++i) {
        const double s = p.t0() + static_cast<double>(i) * dt;
        if (std::abs(x + p.value(i)) >= lvl || s >= cap - dt / 2) break;
    }
    out.push_back(p.time(i));
    double ref = p.value(i);
    while (out.back() < T - dt / 2) {
        const double start = out.back();
        cap = std::min(start + alpha, T);
        std::size_t j = i + 1;
        for (;; ++j) {
            if (std::abs(p.value(j) - ref) >= lvl || p.time(j) >= cap - dt / 2) break;
        }
        i = j;
        ref = p.value(j);
        out.push_back(p.time(j));
    }
    return out;
}

}  // namespace

TEST(DiscretePath, RejectsNonzeroOrigin) {
    EXPECT_THROW(DiscretePath(0.0, 0.1, 1, {1.0, 2.0}), ppde::DomainError);
    EXPECT_THROW(DiscretePath(0.0, 0.1, 2, {0.0, 0.0, 1.0}), ppde::DomainError);
}

TEST(Stop, LinearPathFreezesAfterTime) {
    const auto p = linear(0.0, 0.1, 11, 1.0);
    const auto s = ppde::stop(p, 0.5);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (p.time(i) <= 0.5 + 1e-12) EXPECT_DOUBLE_EQ(s.value(i), p.value(i));
        else EXPECT_DOUBLE_EQ(s.value(i), 0.5);
    }
}

TEST(Stop, ZeroPathIsFixedPoint) {
    const auto z = DiscretePath::zeros(0.0, 0.1, 1, 11);
    EXPECT_EQ(ppde::stop(z, 0.3), z);
}

TEST(Stop, Idempotent) {
    const auto p = brownian(1, 0.01, 101);
    EXPECT_EQ(ppde::stop(ppde::stop(p, 0.3), 0.7), ppde::stop(p, 0.3));
    EXPECT_EQ(ppde::stop(ppde::stop(p, 0.3), 0.3), ppde::stop(p, 0.3));
}

TEST(Stop, OutsideSpanThrows) { EXPECT_THROW(ppde::stop(linear(0.0, 0.1, 11, 1.0), 1.5), ppde::DomainError); }

TEST(Concat, ZeroLeftLinearRight) {
    const auto l = DiscretePath::zeros(0.0, 0.1, 1, 6);
    const auto r = linear(0.5, 0.1, 6, 2.0);
    const auto c = ppde::concat(l, r);
    ASSERT_EQ(c.size(), 11u);
    EXPECT_NEAR(c.value(10), 1.0, 1e-12);
}

TEST(Concat, ZeroRightExtendsConstantly) {
    const auto p = brownian(2, 0.1, 11);
    const auto l = ppde::truncate(p, 0.5);
    const auto c = ppde::concat(l, DiscretePath::zeros(0.5, 0.1, 1, 6));
    EXPECT_EQ(c, ppde::stop(p, 0.5));
}

TEST(Concat, MisalignedGridThrows) {
    const auto l = DiscretePath::zeros(0.0, 0.1, 1, 6);
    EXPECT_THROW(ppde::concat(l, DiscretePath::zeros(0.55, 0.1, 1, 5)), ppde::DomainError);
    EXPECT_THROW(ppde::concat(l, DiscretePath::zeros(0.5, 0.05, 1, 5)), ppde::DomainError);
}

TEST(Shift, AtStartIsIdentity) {
    const auto p = brownian(3, 0.01, 51);
    EXPECT_EQ(ppde::shift(p, 0.0), p);
}

TEST(Shift, LinearSlopeTwo) {
    const auto p = linear(0.0, 0.1, 11, 2.0);
    const auto s = ppde::shift(p, 0.5);
    EXPECT_NEAR(s.t0(), 0.5, 1e-12);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s.value(i), 2.0 * (s.time(i) - 0.5), 1e-12);
}

TEST(Shift, BeyondSpanThrows) { EXPECT_THROW(ppde::shift(linear(0.0, 0.1, 11, 1.0), 1.2), ppde::DomainError); }

TEST(ConcatShift, InversePair) {
    for (std::uint64_t id = 0; id < 20; ++id) {
        const auto l = brownian(id, 0.02, 26);
        const auto r = brownian(id + 100, 0.02, 26, 0.5);
        const auto s = ppde::shift(ppde::concat(l, r), 0.5);
        ASSERT_EQ(s.size(), r.size());
        EXPECT_DOUBLE_EQ(s.t0(), r.t0());
        for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(s.value(i), r.value(i), 1e-14);
        const auto p = brownian(id + 200, 0.02, 51);
        const auto back = ppde::concat(ppde::truncate(p, 0.5), ppde::shift(p, 0.5));
        for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(back.value(i), p.value(i), 1e-14);
    }
}

TEST(DistDinfty, Examples) {
    const auto z = DiscretePath::zeros(0.0, 0.1, 1, 11);
    EXPECT_DOUBLE_EQ(ppde::dist_dinfty({0.5, z}, {0.5, z}), 0.0);
    EXPECT_NEAR(ppde::dist_dinfty({0.0, z}, {0.5, z}), 0.5, 1e-15);
    std::vector<double> v(11, 3.0);
    v[0] = 0.0;
    const DiscretePath c(0.0, 0.1, 1, v);
    EXPECT_NEAR(ppde::dist_dinfty({1.0, z}, {1.0, c}), 3.0, 1e-15);
}

TEST(DistDinfty, IgnoresValuesAfterTime) {
    const auto a = brownian(4, 0.01, 101);
    const auto b = ppde::stop(a, 0.4);
    EXPECT_DOUBLE_EQ(ppde::dist_dinfty({0.4, a}, {0.4, b}), 0.0);
}

TEST(DistDinfty, DifferentGridsAreComparedExactly) {
    const auto a = linear(0.0, 0.1, 11, 1.0);
    const auto b = DiscretePath::zeros(0.0, 0.25, 1, 5);
    EXPECT_NEAR(ppde::dist_dinfty({1.0, a}, {1.0, b}), 1.0, 1e-14);
    EXPECT_NEAR(ppde::dist_dinfty({0.3, a}, {1.0, b}), 0.7 + 0.3, 1e-14);
}

TEST(DistDinftyProperty, MetricAxiomsOnRandomTriples) {
    ppde::Philox4x32 g(11);
    for (std::uint64_t k = 0; k < 200; ++k) {
        const auto u = g.uniforms(k, 0, 0);
        const auto pa = brownian(3 * k, 0.01, 101);
        const auto pb = brownian(3 * k + 1, 0.02, 51);
        const auto pc = brownian(3 * k + 2, 0.005, 201);
        const PathPoint a{std::round(u[0] * 100) / 100, pa}, b{std::round(u[1] * 50) / 50, pb},
            c{std::round(u[2] * 200) / 200, pc};
        const double ab = ppde::dist_dinfty(a, b), ba = ppde::dist_dinfty(b, a);
        EXPECT_DOUBLE_EQ(ab, ba);
        EXPECT_GE(ab, 0.0);
        EXPECT_DOUBLE_EQ(ppde::dist_dinfty(a, a), 0.0);
        EXPECT_LE(ab, ppde::dist_dinfty(a, c) + ppde::dist_dinfty(c, b) + 1e-12);
    }
}

TEST(HittingTimeDelta, Examples) {
    const auto z = DiscretePath::zeros(0.0, 0.01, 1, 101);
    EXPECT_NEAR(ppde::hitting_time_delta(0.0, 0.3, z, 1.0), 0.3, 1e-12);
    EXPECT_NEAR(ppde::hitting_time_delta(0.0, 0.3, linear(0.0, 0.01, 101, 2.0), 1.0), 0.15, 1e-12);
    EXPECT_NEAR(ppde::hitting_time_delta(0.0, 1.5, z, 1.0), 1.0, 1e-12);
    const auto z2 = DiscretePath::zeros(0.4, 0.01, 1, 61);
    EXPECT_NEAR(ppde::hitting_time_delta(0.4, 0.8, z2, 1.0), 1.0, 1e-12);
}

TEST(HittingTimeDeltaProperty, AlwaysInsideCappedInterval) {
    for (std::uint64_t id = 0; id < 300; ++id) {
        const double t = 0.01 * static_cast<double>(id % 90);
        const auto p = brownian(id, 0.01, static_cast<std::size_t>(std::llround((1.0 - t) / 0.01)) + 1, t);
        for (double delta : {0.01, 0.05, 0.2, 0.7, 2.0}) {
            const double s = ppde::hitting_time_delta(t, delta, p, 1.0);
            EXPECT_GT(s, t);
            EXPECT_LE(s, std::min(t + delta, 1.0) + 0.005 + 1e-12);
        }
    }
}

TEST(LevelCascade, ZeroPathCapsBind) {
    const auto z = DiscretePath::zeros(0.0, 0.01, 1, 101);
    const auto c = ppde::level_cascade(0.0, Vec::Zero(1), 0.3, z, 0.0, 1.0);
    const std::vector<double> expect{0.3, 0.6, 0.9, 1.0};
    ASSERT_EQ(c.times.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(c.times[i], expect[i], 1e-12);
}

TEST(LevelCascade, SlopeOneCrossesAtCaps) {
    const auto p = linear(0.0, 0.01, 101, 1.0);
    const auto c = ppde::level_cascade(0.0, Vec::Zero(1), 0.2, p, 0.0, 1.0);
    const std::vector<double> expect{0.2, 0.4, 0.6, 0.8, 1.0};
    ASSERT_EQ(c.times.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(c.times[i], expect[i], 1e-12);
    EXPECT_NEAR(c.increments[0](0), 0.2, 1e-12);
    EXPECT_NEAR(c.increments[3](0), 0.2, 1e-12);
}

TEST(LevelCascade, StartingOffsetAndAnchor) {
    const auto z = DiscretePath::zeros(0.1, 0.01, 1, 91);
    const auto c = ppde::level_cascade(0.1, Vec::Constant(1, 0.05), 0.3, z, 0.0, 1.0);
    EXPECT_NEAR(c.times.front(), 0.3, 1e-12);
    EXPECT_NEAR(c.increments.front()(0), 0.05, 1e-15);
    EXPECT_THROW(ppde::level_cascade(0.1, Vec::Constant(1, 0.5), 0.3, z, 0.0, 1.0), ppde::DomainError);
}

TEST(LevelCascade, MatchesForwardScanOracle) {
    for (std::uint64_t id = 0; id < 200; ++id) {
        const auto p = brownian(id, 0.002, 501);
        const double alpha = 0.05 + 0.05 * static_cast<double>(id % 5);
        const double x = (static_cast<double>(id % 7) / 7.0 - 0.5) * alpha;
        const auto c = ppde::level_cascade(0.0, Vec::Constant(1, x), alpha, p, 0.0, 1.0);
        const auto oracle = scan_cascade(p, x, alpha, 0.0, 1.0);
        ASSERT_EQ(c.times.size(), oracle.size()) << id;
        for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(c.times[i], oracle[i], 1e-12);
    }
}

TEST(LevelCascadeProperty, InvariantsOnBrownianPaths) {
    for (std::uint64_t id = 0; id < 300; ++id) {
        const auto p = brownian(id, 0.004, 251, 0.0, 99);
        const double alpha = 0.1 + 0.002 * static_cast<double>(id % 50);
        const auto c = ppde::level_cascade(0.0, Vec::Zero(1), alpha, p, 0.0, 1.0);
        EXPECT_NEAR(c.times.back(), 1.0, 1e-12);
        for (std::size_t i = 0; i + 1 < c.times.size(); ++i) {
            EXPECT_LT(c.times[i], c.times[i + 1]);
            EXPECT_LE(c.times[i + 1] - c.times[i], alpha + p.dt() + 1e-12);
            EXPECT_LE(std::abs(c.increments[i + 1](0)), alpha + 3.0 * std::sqrt(p.dt()) * 6.0);
        }
        double sum = 0.0;
        for (const auto& x : c.increments) sum += x(0);
        EXPECT_NEAR(sum, p.value(p.size() - 1), 1e-12);
    }
}

TEST(LevelCascadeProperty, HittingTimesNondecreasingInLevel) {
    for (std::uint64_t id = 0; id < 100; ++id) {
        const auto p = brownian(id, 0.002, 501, 0.0, 5);
        double prev = 0.0;
        for (double d : {0.02, 0.05, 0.1, 0.2, 0.4, 0.8}) {
            const double s = ppde::hitting_time_delta(0.0, d, p, 1.0);
            EXPECT_GE(s, prev);
            prev = s;
        }
        const auto c1 = ppde::level_cascade(0.0, Vec::Zero(1), 0.1, p, 0.0, 1.0);
        const auto c2 = ppde::level_cascade(0.0, Vec::Zero(1), 0.2, p, 0.0, 1.0);
        EXPECT_LE(c1.times.front(), c2.times.front());
    }
}

TEST(HatPath, ZeroInputsGiveZeroPath) {
    const auto z = DiscretePath::zeros(0.0, 0.01, 1, 101);
    const ppde::Skeleton pi{{0.0, Vec::Zero(1)}};
    const auto h = ppde::interpolate_hat_path(pi, 0.0, Vec::Zero(1), 0.2, z);
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(h.value(i), 0.0);
}

TEST(HatPath, SlopeOneMatchesAtKnots) {
    const auto p = linear(0.0, 0.01, 101, 1.0);
    const ppde::Skeleton pi{{0.0, Vec::Zero(1)}};
    const auto h = ppde::interpolate_hat_path(pi, 0.0, Vec::Zero(1), 0.2, p);
    for (double k : {0.2, 0.4, 0.6, 0.8, 1.0}) EXPECT_NEAR(h.value(h.index_of(k)), k, 1e-12);
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(h.value(i), p.value(i), 1e-12);
}

TEST(HatPath, PrefixKnotsAreInterpolated) {
    const ppde::Skeleton pi{{0.0, Vec::Zero(1)}, {0.2, Vec::Constant(1, 0.2)}, {0.3, Vec::Constant(1, -0.2)}};
    const auto z = DiscretePath::zeros(0.3, 0.01, 1, 71);
    const auto h = ppde::interpolate_hat_path(pi, 0.3, Vec::Zero(1), 0.2, z);
    EXPECT_NEAR(h.value(h.index_of(0.1)), 0.1, 1e-12);
    EXPECT_NEAR(h.value(h.index_of(0.2)), 0.2, 1e-12);
    EXPECT_NEAR(h.value(h.index_of(0.25)), 0.1, 1e-12);
    EXPECT_NEAR(h.value(h.index_of(0.3)), 0.0, 1e-12);
    EXPECT_NEAR(h.value(h.index_of(0.9)), 0.0, 1e-12);
    const auto sk = ppde::skeleton_path(pi, 0.01, 1.0);
    EXPECT_NEAR(sk.value(sk.index_of(0.25)), 0.1, 1e-12);
    EXPECT_NEAR(sk.value(sk.size() - 1), 0.0, 1e-12);
}

TEST(PathCsv, RoundTrip) {
    const auto p = brownian(9, 0.01, 31, 0.2);
    std::stringstream ss;
    ppde::write_csv(ss, p);
    const auto q = ppde::read_csv_path(ss);
    ASSERT_EQ(q.size(), p.size());
    EXPECT_NEAR(q.t0(), p.t0(), 1e-15);
    EXPECT_NEAR(q.dt(), p.dt(), 1e-15);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_DOUBLE_EQ(q.value(i), p.value(i));
}
