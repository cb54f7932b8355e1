#include "kgd/random.hpp"

#include <cmath>
#include <numbers>

namespace kgd {

namespace {

constexpr double kTwoPow53Inv = 1.0 / 9007199254740992.0;

// Maps 64 random bits onto (0, 1], so log() is always finite.
double open_unit(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 1.0) * kTwoPow53Inv; }

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t hash64(std::uint64_t seed, std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ULL ^ mix64(seed);
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return mix64(h);
}

double counter_uniform(std::uint64_t key, std::uint64_t counter) {
    return open_unit(mix64(key ^ mix64(counter)));
}

double counter_normal(std::uint64_t key, std::uint64_t counter) {
    // Box-Muller on two independent counter draws.
    const double u1 = counter_uniform(key, 2 * counter);
    const double u2 = counter_uniform(key, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * kTwoPow53Inv; }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = open_unit(engine_());
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
}

}  // namespace kgd
