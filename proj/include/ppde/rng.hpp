#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace ppde {

/// Philox4x32-10 counter-based generator (Salmon et al.). Output is a pure
/// function of (key, counter).
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    explicit Philox4x32(std::uint64_t seed)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    [[nodiscard]] Counter operator()(Counter ctr) const {
        Key k = key_;
        for (int r = 0; r < 10; ++r) {
            ctr = round(ctr, k);
            k[0] += kW0;
            k[1] += kW1;
        }
        return ctr;
    }

    /// Four uniforms in (0, 1) for counter (a, b, c).
    [[nodiscard]] std::array<double, 4> uniforms(std::uint64_t a, std::uint32_t b, std::uint32_t c) const {
        const Counter out = (*this)({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), b, c});
        std::array<double, 4> u{};
        for (int i = 0; i < 4; ++i) u[static_cast<std::size_t>(i)] = (static_cast<double>(out[static_cast<std::size_t>(i)]) + 0.5) * 0x1p-32;
        return u;
    }

    /// Four standard normals (Box-Muller) for counter (a, b, c).
    [[nodiscard]] std::array<double, 4> normals(std::uint64_t a, std::uint32_t b, std::uint32_t c) const {
        const auto u = uniforms(a, b, c);
        std::array<double, 4> z{};
        for (int i = 0; i < 2; ++i) {
            const double r = std::sqrt(-2.0 * std::log(u[static_cast<std::size_t>(2 * i)]));
            const double th = 2.0 * std::numbers::pi * u[static_cast<std::size_t>(2 * i + 1)];
            z[static_cast<std::size_t>(2 * i)] = r * std::cos(th);
            z[static_cast<std::size_t>(2 * i + 1)] = r * std::sin(th);
        }
        return z;
    }

private:
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;

    static std::pair<std::uint32_t, std::uint32_t> mulhilo(std::uint32_t a, std::uint32_t b) {
        const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
        return {static_cast<std::uint32_t>(p >> 32), static_cast<std::uint32_t>(p)};
    }

    static Counter round(const Counter& c, const Key& k) {
        const auto [hi0, lo0] = mulhilo(kM0, c[0]);
        const auto [hi1, lo1] = mulhilo(kM1, c[2]);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }

    Key key_;
};

}  // namespace ppde
