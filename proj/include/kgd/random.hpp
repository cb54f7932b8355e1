#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace kgd {

/// splitmix64 finalizer; a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x);

/// FNV-1a over `text`, keyed by `seed` and finalized with mix64.
std::uint64_t hash64(std::uint64_t seed, std::string_view text);

/// Counter-based draws: the value for (key, counter) depends on nothing else.
double counter_uniform(std::uint64_t key, std::uint64_t counter);
double counter_normal(std::uint64_t key, std::uint64_t counter);

/// Seeded sequential generator. Uniform and normal transforms are written out
/// here rather than taken from <random> distributions, whose output is not
/// pinned across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace kgd
