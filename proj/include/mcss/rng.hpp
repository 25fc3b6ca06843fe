#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace mcss {

// Counter-based streams built on splitmix64. Each consumer derives an
// independent stream from (seed, stream id); draws depend only on the stream
// state, never on scheduling, which is what makes simulation output
// byte-identical across thread counts.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Deterministic per-stream RNG: uniform doubles in [0,1) with 53-bit
/// resolution and Box-Muller normals. Stateful but cheap to construct, so
/// callers make one per path / per sample index.
class rng_stream {
  public:
    rng_stream(std::uint64_t seed, std::uint64_t stream) {
        // Mix the pair so that neighbouring (seed, stream) values decorrelate.
        std::uint64_t s = seed;
        std::uint64_t a = splitmix64(s);
        s = stream ^ 0x6a09e667f3bcc909ull;
        std::uint64_t b = splitmix64(s);
        state_ = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    double next_uniform() {  // in [0,1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // Box-Muller; u1 bounded away from 0 so log stays finite.
        double u1 = next_uniform();
        if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
        const double u2 = next_uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = r * std::sin(two_pi * u2);
        have_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

    bool next_bernoulli(double p) { return next_uniform() < p; }

  private:
    std::uint64_t state_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Halton low-discrepancy sequence (bases = first primes), used for
/// quasi-random box sampling in assumption checks. index starts at 1.
inline double halton(std::uint64_t index, unsigned base) {
    double f = 1.0, r = 0.0;
    while (index > 0) {
        f /= base;
        r += f * static_cast<double>(index % base);
        index /= base;
    }
    return r;
}

inline unsigned nth_prime(std::size_t n) {
    static const unsigned primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31,
                                      37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79,
                                      83, 89, 97, 101, 103, 107, 109, 113, 127, 131};
    return primes[n % (sizeof(primes) / sizeof(primes[0]))];
}

}  // namespace mcss
