#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "qnd/constants.hpp"

namespace qnd {

// splitmix64; used to expand seeds into engine state and to derive
// counter-based substreams (master seed + index) so batches parallelize
// with order-independent results.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** with explicit, platform-independent samplers. std::random
// distributions are implementation-defined, which would break the
// byte-identical-rerun contract if the toolchain ever changes.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    static RandomStream substream(std::uint64_t master_seed, std::uint64_t index) {
        std::uint64_t sm = master_seed;
        std::uint64_t base = splitmix64(sm);
        return RandomStream(base ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = std::rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal, Box-Muller with caching
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * pi * u2;
        cached_ = radius * std::sin(angle);
        have_cached_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // exact Poisson sampler; large means are split into independent chunks
    // (Poisson additivity) to keep the multiplication method numerically safe
    long poisson(double mean) {
        if (mean < 0.0) throw std::invalid_argument("poisson: negative mean");
        long total = 0;
        while (mean > 12.0) {
            total += poisson_small_(12.0);
            mean -= 12.0;
        }
        return total + poisson_small_(mean);
    }

    // Binomial(n, 1/2) via popcount over random words
    long binomial_half(long n) {
        if (n < 0) throw std::invalid_argument("binomial_half: negative n");
        long count = 0;
        while (n >= 64) {
            count += std::popcount(next_u64());
            n -= 64;
        }
        if (n > 0) count += std::popcount(next_u64() >> (64 - n));
        return count;
    }

    bool bernoulli_half() { return (next_u64() >> 63) != 0; }

private:
    long poisson_small_(double mean) {
        if (mean <= 0.0) return 0;
        const double limit = std::exp(-mean);
        long k = 0;
        double product = uniform();
        while (product > limit) {
            ++k;
            product *= uniform();
        }
        return k;
    }

    std::uint64_t state_[4] = {};
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace qnd
