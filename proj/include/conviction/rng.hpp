#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace conviction {

// splitmix64; fully specified arithmetic so seeded runs are reproducible
// across platforms (std distributions are implementation-defined and avoided).
struct Rng {
    uint64_t state;

    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// uniform in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// uniform integer in [0, n), rejection-sampled (unbiased, portable)
    uint64_t next_below(uint64_t n) {
        if (n == 0) return 0;
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    /// standard normal via Box-Muller
    double next_gaussian() {
        double u1 = next_double(), u2 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
};

/// Deterministically derive an independent stream for a named consumer
/// from one root seed (single --seed splits per component).
inline uint64_t split_seed(uint64_t root, std::string_view consumer) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (char ch : consumer) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ull;
    }
    Rng mix(root ^ h);
    mix.next_u64();
    return mix.next_u64();
}

}  // namespace conviction
