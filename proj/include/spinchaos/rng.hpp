#pragma once

// Counter-based (stateless) random number generation.
//
// Every random quantity in the library is a pure function of
// (seed, stream tag, indices..., counter). This makes ensembles
// reproducible bit-for-bit regardless of thread count or evaluation
// order, and lets independent substreams be derived without
// coordination: replicas, particles and time steps each get their
// own counters.

#include <cstdint>
#include <cmath>

namespace spinchaos::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Stream tags. Distinct tags keep logically distinct random objects
// (disorder entries, Brownian increments, bootstrap resamples, ...)
// on non-overlapping substreams of the same master seed.
enum class Tag : std::uint64_t {
    disorder   = 0x01,
    initial    = 0x02,
    brownian   = 0x03,
    bridge     = 0x04,
    bootstrap  = 0x05,
    subsample  = 0x06,
    scratch    = 0x07,
};

// Derived substream key; cheap to copy, safe to share.
struct Stream {
    std::uint64_t state;

    std::uint64_t u64(std::uint64_t counter) const {
        return splitmix64(state ^ (counter * kGolden + 0x6A09E667F3BCC909ull));
    }

    // uniform on (0,1), never returns 0 or 1
    double uniform(std::uint64_t counter) const {
        return static_cast<double>(u64(counter) >> 11) * 0x1.0p-53 + 0x1.0p-54;
    }

    // standard normal via Box-Muller; one normal consumes counters (2c, 2c+1)
    double normal(std::uint64_t counter) const {
        const double u1 = uniform(2 * counter);
        const double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }
};

inline Stream stream(std::uint64_t seed, Tag tag,
                     std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t x = splitmix64(seed ^ kGolden);
    x = splitmix64(x ^ (static_cast<std::uint64_t>(tag) + kGolden));
    x = splitmix64(x ^ (a + 0xD1B54A32D192ED03ull));
    x = splitmix64(x ^ (b + 0x8CB92BA72F3D8DD7ull));
    x = splitmix64(x ^ (c + 0xEB44ACCAB455D165ull));
    return Stream{x};
}

// Token for a whole random object (e.g. one disorder matrix).
inline std::uint64_t derive_token(std::uint64_t seed, std::uint64_t index, Tag tag) {
    return stream(seed, tag, index).state;
}

} // namespace spinchaos::rng
