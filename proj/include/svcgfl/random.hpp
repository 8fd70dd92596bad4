#pragma once

// Seeded random streams. Every stochastic routine takes an explicit Rng by
// reference (or a seed); there is no global generator.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <random>
#include <string_view>

namespace svcgfl {

/// splitmix64 finaliser, used to derive independent sub-seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Deterministically combine a base seed with a list of stream tags.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix64(base);
    for (auto t : tags) h = mix64(h ^ mix64(t));
    return h;
}

inline std::uint64_t tag(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t double_bits(double x) {
    std::uint64_t u;
    std::memcpy(&u, &x, sizeof u);
    return u;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    double normal() { return normal_(engine_); }
    double normal(double mean, double sd) { return mean + sd * normal_(engine_); }

    /// Exponential with the given rate.
    double exponential(double rate) { return std::exponential_distribution<double>(rate)(engine_); }

    /// Inverse-Gaussian(mean mu, shape lam), Michael-Schucany-Haas.
    double inverse_gaussian(double mu, double lam) {
        const double nu = normal();
        const double y = nu * nu;
        const double x = mu + mu * mu * y / (2.0 * lam) -
                         mu / (2.0 * lam) * std::sqrt(4.0 * mu * lam * y + mu * mu * y * y);
        return uniform() <= mu / (mu + x) ? x : mu * mu / x;
    }

    /// Index drawn from an (unnormalised) discrete distribution.
    template <typename Range>
    std::size_t categorical(const Range& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double u = uniform() * total;
        std::size_t k = 0, last = 0;
        for (double w : weights) {
            if (w > 0.0) last = k;
            if (u < w) return k;
            u -= w;
            ++k;
        }
        return last;
    }

    std::uint64_t next_u64() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace svcgfl
