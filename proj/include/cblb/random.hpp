#pragma once

// Counter-based random streams.
//
// Every random quantity in the toolkit is drawn from a Stream addressed by a
// path of integer ids (root seed -> subset k -> replicate j, ...). A child
// stream's key is a Philox hash of (parent key, id), so the value of any draw
// depends only on its address and never on which thread computes it or in
// which order work items run.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace cblb {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace detail

/// Philox4x32-10 block function (Salmon et al., SC'11).
class Philox4x32 {
public:
    using Block = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr Block generate(Block ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
                   static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
                   static_cast<std::uint32_t>(p0)};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85;
};

/// A reproducible random stream; satisfies UniformRandomBitGenerator.
class Stream {
public:
    using result_type = std::uint64_t;

    explicit Stream(std::uint64_t seed) noexcept : key_(detail::splitmix64(seed)) {}

    /// Independent child stream addressed by `id`. Does not advance this stream.
    [[nodiscard]] Stream substream(std::uint64_t id) const noexcept {
        // Output blocks use counter words 2 and 3 == 0; the all-ones tag keeps
        // key derivation disjoint from them.
        const auto block = Philox4x32::generate(
            {static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32),
             0xFFFFFFFFu, 0xFFFFFFFFu},
            split_key());
        Stream child;
        child.key_ = std::uint64_t{block[0]} | (std::uint64_t{block[1]} << 32);
        return child;
    }

    [[nodiscard]] std::uint64_t key() const noexcept { return key_; }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (used_ >= 2) {
            block_ = Philox4x32::generate(
                {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32), 0u, 0u},
                split_key());
            ++counter_;
            used_ = 0;
        }
        const std::size_t at = 2 * used_++;
        return std::uint64_t{block_[at]} | (std::uint64_t{block_[at + 1]} << 32);
    }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform integer in [0, bound); bound > 0. Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t bound) noexcept {
        auto m = static_cast<unsigned __int128>((*this)()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<unsigned __int128>((*this)()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal by Box-Muller; the second variate of each pair is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double radius = std::sqrt(-2.0 * std::log(uniform()));
        const double angle = 2.0 * std::numbers::pi * uniform();
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    Stream() = default;

    [[nodiscard]] Philox4x32::Key split_key() const noexcept {
        return {static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)};
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    Philox4x32::Block block_{};
    std::size_t used_ = 2;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

namespace detail {

// Stirling-series remainder log(k!) - [(k + 1/2) log(k + 1) - (k + 1) + log(sqrt(2 pi))].
inline double stirling_tail(double k) noexcept {
    static constexpr double kTail[] = {
        0.0810614667953272,  0.0413406959554092,  0.0276779256849983, 0.02079067210376509,
        0.0166446911898211,  0.0138761288230707,  0.0118967099458917, 0.0104112652619720,
        0.00925546218271273, 0.00833056343336287,
    };
    if (k <= 9) return kTail[static_cast<int>(k)];
    const double kp1sq = (k + 1) * (k + 1);
    return (1.0 / 12 - (1.0 / 360 - 1.0 / 1260 / kp1sq) / kp1sq) / (k + 1);
}

// Sequential-search inversion (BINV); expected cost O(n p). Needs p <= 0.5.
inline std::int64_t binomial_inversion(Stream& stream, std::int64_t n, double p) noexcept {
    const double q = 1.0 - p;
    const double odds = p / q;
    const double a = static_cast<double>(n + 1) * odds;
    const double r0 = std::exp(static_cast<double>(n) * std::log1p(-p));
    const double mean = static_cast<double>(n) * p;
    const auto bound = std::min<std::int64_t>(
        n, static_cast<std::int64_t>(mean + 10.0 * std::sqrt(mean * q + 1.0)));
    for (;;) {
        double u = stream.uniform();
        double r = r0;
        std::int64_t x = 0;
        while (u > r) {
            u -= r;
            ++x;
            if (x > bound) break;
            r *= a / static_cast<double>(x) - odds;
        }
        if (x <= bound) return x;
    }
}

// Transformed rejection with squeeze (Hormann's BTRS); O(1) expected. Needs
// p <= 0.5 and n p >= 10.
inline std::int64_t binomial_btrs(Stream& stream, std::int64_t n, double p) noexcept {
    const double count = static_cast<double>(n);
    const double stddev = std::sqrt(count * p * (1 - p));
    const double b = 1.15 + 2.53 * stddev;
    const double a = -0.0873 + 0.0248 * b + 0.01 * p;
    const double c = count * p + 0.5;
    const double v_r = 0.92 - 4.2 / b;
    const double r = p / (1 - p);
    const double alpha = (2.83 + 5.1 / b) * stddev;
    const double m = std::floor((count + 1) * p);
    for (;;) {
        const double u = stream.uniform() - 0.5;
        double v = stream.uniform();
        const double us = 0.5 - std::abs(u);
        const double k = std::floor((2 * a / us + b) * u + c);
        if (k < 0 || k > count) continue;
        if (us >= 0.07 && v <= v_r) return static_cast<std::int64_t>(k);
        v = std::log(v * alpha / (a / (us * us) + b));
        const double upper = (m + 0.5) * std::log((m + 1) / (r * (count - m + 1))) +
                             (count + 1) * std::log((count - m + 1) / (count - k + 1)) +
                             (k + 0.5) * std::log(r * (count - k + 1) / (k + 1)) +
                             stirling_tail(m) + stirling_tail(count - m) - stirling_tail(k) -
                             stirling_tail(count - k);
        if (v <= upper) return static_cast<std::int64_t>(k);
    }
}

} // namespace detail

/// Exact Binomial(n, p) variate.
inline std::int64_t binomial(Stream& stream, std::int64_t n, double p) noexcept {
    if (n <= 0 || !(p > 0.0)) return 0;
    if (p >= 1.0) return n;
    if (p > 0.5) return n - binomial(stream, n, 1.0 - p);
    if (static_cast<double>(n) * p < 10.0) return detail::binomial_inversion(stream, n, p);
    return detail::binomial_btrs(stream, n, p);
}

} // namespace cblb
