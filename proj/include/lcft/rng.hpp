#pragma once

#include <cmath>
#include <cstdint>

namespace lcft {

/// SplitMix64 finaliser; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Named sub-streams of a replica. Distinct streams never share draws.
enum class Stream : std::uint64_t {
    SphereModes = 1,
    LocalPatch = 2,
    ExtraGaussian = 3,
    BrownianPath = 4,
    LateralNoise = 5,
    Generic = 6,
};

/// Counter-based generator: draw k of stream (seed, replica, stream) is
/// mix64(key + k * golden) where key hashes the triple. Any draw can be
/// reproduced without replaying earlier ones, so results do not depend on
/// how replicas are spread over workers.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t replica, Stream stream = Stream::Generic) noexcept
        : key_(mix64(mix64(seed) ^ mix64(replica + 0x632BE59BD9B4E019ULL) ^
                     (static_cast<std::uint64_t>(stream) * 0xD1B54A32D192ED03ULL))) {}

    std::uint64_t next_u64() noexcept {
        return mix64(key_ + (counter_++) * 0x9E3779B97F4A7C15ULL);
    }

    /// Uniform on (0, 1), never exactly 0.
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal by Box-Muller; the spare variate is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    std::uint64_t counter() const noexcept { return counter_; }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace lcft
