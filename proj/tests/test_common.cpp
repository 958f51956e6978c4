#include <algorithm>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "sbld/common.hpp"

using namespace sbld;

TEST(Rng, Mt19937_64MatchesStandardReferenceValue) {
    // The standard pins the 10000th draw of a mt19937_64 seeded with 5489.
    Rng r(5489);
    uint64_t v = 0;
    for (int i = 0; i < 10000; ++i) v = r.next_u64();
    EXPECT_EQ(v, 9981545732273789042ULL);
}

TEST(Rng, DeterministicPerSeed) {
    Rng a(42), b(42), c(43);
    std::vector<double> va, vb, vc;
    for (int i = 0; i < 100; ++i) {
        va.push_back(a.normal());
        vb.push_back(b.normal());
        vc.push_back(c.normal());
    }
    EXPECT_EQ(va, vb);
    EXPECT_NE(va, vc);
}

TEST(Rng, UniformBounds) {
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform(-2.0, 3.0);
        EXPECT_GE(u, -2.0);
        EXPECT_LT(u, 3.0);
    }
}

TEST(Rng, UniformIntBoundsAndCoverage) {
    Rng r(7);
    std::set<uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
        const uint64_t v = r.uniform_int(5);
        EXPECT_LT(v, 5u);
        seen.insert(v);
    }
    EXPECT_EQ(seen.size(), 5u);
}

TEST(Rng, NormalMoments) {
    Rng r(123);
    const int n = 200000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.01);
    EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
    Rng r(9);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    auto w = v;
    r.shuffle(w.begin(), w.end());
    EXPECT_NE(v, w);
    std::sort(w.begin(), w.end());
    EXPECT_EQ(v, w);
}

TEST(Seeds, DeriveSeedDistinct) {
    std::set<uint64_t> seen;
    for (uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, i));
    EXPECT_EQ(seen.size(), 1000u);
    EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
}

TEST(Hash, Fnv1aReferenceVectors) {
    EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(Errors, TypesAreDistinct) {
    EXPECT_THROW(throw validation_error("x"), validation_error);
    EXPECT_THROW(throw io_error("x"), std::runtime_error);
    const auto rethrow = [] {
        try {
            throw training_error("boom");
        } catch (const validation_error&) {
            FAIL() << "training_error caught as validation_error";
        }
    };
    EXPECT_THROW(rethrow(), training_error);
}
