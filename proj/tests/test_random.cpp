#include <gtest/gtest.h>

#include <cmath>

#include "kgd/random.hpp"

using namespace kgd;

TEST(Random, Mix64IsSplitmixFinalizer) {
    // First output of a splitmix64 generator seeded with 0.
    EXPECT_EQ(mix64(0), 0xe220a8397b1dcdafULL);
    EXPECT_NE(mix64(1), mix64(2));
}

TEST(Random, HashDependsOnSeedAndText) {
    EXPECT_EQ(hash64(1, "car"), hash64(1, "car"));
    EXPECT_NE(hash64(1, "car"), hash64(2, "car"));
    EXPECT_NE(hash64(1, "car"), hash64(1, "cat"));
    EXPECT_NE(hash64(1, ""), hash64(1, std::string_view("\0", 1)));
}

TEST(Random, CounterDrawsArePure) {
    for (std::uint64_t c = 0; c < 100; ++c) {
        const double u = counter_uniform(5, c);
        EXPECT_GT(u, 0.0);
        EXPECT_LE(u, 1.0);
        EXPECT_EQ(u, counter_uniform(5, c));
        EXPECT_EQ(counter_normal(5, c), counter_normal(5, c));
    }
}

TEST(Random, MomentsAreSane) {
    Rng rng(123);
    const int n = 200000;
    double su = 0, sn = 0, sn2 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    EXPECT_NEAR(su / n, 0.5, 0.01);
    EXPECT_NEAR(sn / n, 0.0, 0.01);
    EXPECT_NEAR(sn2 / n, 1.0, 0.02);

    double cn = 0, cn2 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = counter_normal(77, static_cast<std::uint64_t>(i));
        cn += z;
        cn2 += z * z;
    }
    EXPECT_NEAR(cn / n, 0.0, 0.01);
    EXPECT_NEAR(cn2 / n, 1.0, 0.02);
}

TEST(Random, BelowStaysInRange) {
    Rng rng(8);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) ++hits[rng.below(7)];
    for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Random, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
}
