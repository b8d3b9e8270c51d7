#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>

namespace duet {

/// Deterministic 64-bit generator (splitmix64). The state advances by a fixed
/// odd constant and the output is a bijective mix of the counter, so identical
/// seeds reproduce identical draw sequences on every platform. Sub-streams for
/// (step, class, image, ...) keys are derived by hashing the key words into a
/// fresh seed, which keeps parallel data preparation deterministic.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : state_(seed) {}

    /// Independent stream keyed by (seed, words...). Order of words matters.
    static SeededRng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> words) {
        SeededRng mixer(seed);
        std::uint64_t acc = mixer.next_u64();
        for (std::uint64_t w : words) {
            SeededRng h(acc ^ w);
            acc = h.next_u64();
        }
        return SeededRng(acc);
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Unbiased integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (uncached; two draws per call).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    std::uint64_t state_;
};

}  // namespace duet
