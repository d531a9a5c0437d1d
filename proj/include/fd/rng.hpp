#pragma once

#include <cmath>
#include <cstdint>

namespace fd {

namespace detail {
// splitmix64 finalizer (Vigna). Stable across platforms.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
} // namespace detail

// Counter-based stream: (seed, stream id) fully determines the sequence.
// Independent subsystems (init, shuffle, FD draws, data gen) take disjoint
// stream ids so toggling one never perturbs another.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream)
        : key_(detail::mix64(seed) ^ detail::mix64(~stream)), counter_(0) {}

    std::uint64_t next_u64() { return detail::mix64(key_ + ++counter_); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + next_double() * (hi - lo); }

    // Uniform integer in [0, n), rejection-sampled so every value has
    // probability exactly 1/n.
    std::uint64_t next_below(std::uint64_t n) {
        const std::uint64_t limit = ~0ULL - ~0ULL % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    bool bernoulli(double p) { return next_double() < p; }

    double normal(double mean, double stddev) {
        // Box-Muller; the second variate is discarded to keep the stream
        // position a pure function of the call count.
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        return mean + stddev * r * std::cos(two_pi * u2);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

// Stream-id namespaces, one per randomness consumer.
namespace streams {
inline constexpr std::uint64_t kWeightInit = 0x01ULL << 56;
inline constexpr std::uint64_t kShuffle = 0x02ULL << 56;
inline constexpr std::uint64_t kFdDraw = 0x03ULL << 56;
inline constexpr std::uint64_t kDataGen = 0x04ULL << 56;
inline constexpr std::uint64_t kCorrupt = 0x05ULL << 56;

// Combines a namespace tag with up to three indices into one stream id.
inline std::uint64_t sub(std::uint64_t ns, std::uint64_t a, std::uint64_t b = 0,
                         std::uint64_t c = 0) {
    std::uint64_t h = ns;
    h = detail::mix64(h ^ detail::mix64(a));
    h = detail::mix64(h ^ detail::mix64(b));
    h = detail::mix64(h ^ detail::mix64(c));
    return h;
}
} // namespace streams

} // namespace fd
