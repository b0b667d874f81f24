#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace rcl {

// Seeded generator with platform-independent output: mt19937_64 bits are
// standardized, and the real/integer/normal conversions below are spelled out
// instead of relying on implementation-defined std distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Integer in [0, n), multiply-shift mapping.
    std::size_t index(std::size_t n);
    // Standard normal via Box-Muller; the second variate is cached.
    double normal();

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// splitmix64 mix of (base, stream): independent per-item generator seeds.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

} // namespace rcl
