#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace bfusion {

/// SplitMix64 finaliser, used to fold stream tags into a single 64-bit id.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Counter-based Philox4x32-10 generator.
///
/// The key is the user seed and the upper half of the 128-bit counter is a
/// stream id, so every (seed, stream) pair addresses an independent sequence
/// that can be reconstructed on any worker without coordination.
class Philox {
public:
    using result_type = std::uint64_t;

    Philox(std::uint64_t seed, std::uint64_t stream) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(stream) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (pos_ == 2) {
            refill();
        }
        const auto lo = static_cast<std::uint64_t>(buf_[2 * pos_]);
        const auto hi = static_cast<std::uint64_t>(buf_[2 * pos_ + 1]);
        ++pos_;
        return lo | (hi << 32);
    }

    void discard(std::uint64_t n) noexcept {
        for (std::uint64_t i = 0; i < n; ++i) {
            (*this)();
        }
    }

private:
    void refill() noexcept {
        std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                                         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
        std::array<std::uint32_t, 2> key = key_;
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        buf_ = ctr;
        ++block_;
        pos_ = 0;
    }

    static constexpr std::uint32_t kMul0 = 0xD2511F53U;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57U;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9U;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85U;

    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int pos_ = 2;
};

using Rng = Philox;

/// Purpose tags for stream derivation; keeps draws for different roles apart.
enum class StreamTag : std::uint64_t {
    Initial = 1,
    Propagate = 2,
    Resample = 3,
    Sampler = 4,
    Synthetic = 5,
    Baseline = 6,
    Test = 7,
};

/// Stream for (tag, a, b): e.g. (Propagate, particle, iteration).
inline Rng make_stream(std::uint64_t seed, StreamTag tag, std::uint64_t a = 0, std::uint64_t b = 0) noexcept {
    std::uint64_t id = mix64(static_cast<std::uint64_t>(tag));
    id = mix64(id ^ mix64(a + 0x632BE59BD9B4E019ULL));
    id = mix64(id ^ mix64(b + 0x85157AF5ULL));
    return Rng(seed, id);
}

/// Uniform on the open interval (0,1).
inline double uniform01(Rng& rng) noexcept {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double std_normal(Rng& rng) {
    std::normal_distribution<double> dist;
    return dist(rng);
}

inline long long poisson(Rng& rng, double mean) {
    if (!(mean > 0.0)) {
        return 0;
    }
    std::poisson_distribution<long long> dist(mean);
    return dist(rng);
}

/// Gamma-Poisson mixture parameterised by mean and dispersion r.
inline long long negative_binomial(Rng& rng, double mean, double dispersion) {
    if (!(mean > 0.0)) {
        return 0;
    }
    std::gamma_distribution<double> gamma(dispersion, mean / dispersion);
    return poisson(rng, gamma(rng));
}

} // namespace bfusion
