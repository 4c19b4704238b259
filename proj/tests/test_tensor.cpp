#include <gtest/gtest.h>

#include "advlab/random.hpp"
#include "advlab/tensor.hpp"

using namespace advlab;

namespace {

Tensor random_tensor(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    Tensor t(Shape{n});
    for (double& v : t) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

}  // namespace

TEST(Shape, RejectsZeroDimension) {
    EXPECT_THROW(Shape({3, 0, 2}), std::invalid_argument);
    EXPECT_EQ(Shape({2, 3, 4}).count(), 24u);
}

TEST(Tensor, DataLengthMustMatchShape) {
    EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, ChannelLastIndexing) {
    Tensor t(Shape{2, 3, 2});
    t.at(1, 2, 1) = 7.0;
    EXPECT_EQ(t[(1 * 3 + 2) * 2 + 1], 7.0);
}

TEST(Sign, Examples) {
    EXPECT_EQ(sign(Tensor::vector({-0.5, 0.0, 2.0})), Tensor::vector({-1.0, 0.0, 1.0}));
    EXPECT_EQ(sign(Tensor(Shape{2, 2})), Tensor(Shape{2, 2}));
}

TEST(Sign, MatchesComparisonScan) {
    Rng rng(100);
    Tensor t = random_tensor(rng, 100);
    t[5] = 0.0;
    const Tensor s = sign(t);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double expected = t[i] > 0 ? 1.0 : (t[i] < 0 ? -1.0 : 0.0);
        EXPECT_EQ(s[i], expected) << i;
    }
}

TEST(Sign, Idempotent) {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor t = random_tensor(rng, 1 + rng.below(40));
        if (trial % 3 == 0) t[0] = 0.0;
        EXPECT_EQ(sign(sign(t)), sign(t));
    }
}

TEST(BoxClamp, Examples) {
    EXPECT_EQ(box_clamp(Tensor::vector({0.5}), Tensor::vector({0}), Tensor::vector({1})), Tensor::vector({0.5}));
    EXPECT_EQ(box_clamp(Tensor::vector({-3, 3}), Tensor::vector({0, 0}), Tensor::vector({1, 1})),
              Tensor::vector({0, 1}));
}

TEST(BoxClamp, ShapeMismatchFails) {
    EXPECT_THROW(box_clamp(Tensor::vector({1, 2, 3}), Tensor::vector({0, 0}), Tensor::vector({1, 1})),
                 std::invalid_argument);
}

TEST(BoxClamp, InvertedBoundsFail) {
    EXPECT_THROW(box_clamp(Tensor::vector({1}), Tensor::vector({2}), Tensor::vector({1})), std::invalid_argument);
}

TEST(BoxClamp, ScalarBoundsBroadcast) {
    EXPECT_EQ(box_clamp(Tensor::vector({-1, 0.3, 4}), Tensor::vector({0}), Tensor::vector({1})),
              Tensor::vector({0, 0.3, 1}));
}

TEST(BoxClamp, MatchesElementwiseOracleAndIsIdempotent) {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2), v = rng.uniform(-3, 3);
        const double lo = std::min(a, b), hi = std::max(a, b);
        double expected = v;
        if (expected < lo) expected = lo;
        if (expected > hi) expected = hi;
        const Tensor out = box_clamp(Tensor::vector({v}), Tensor::vector({lo}), Tensor::vector({hi}));
        ASSERT_EQ(out[0], expected);
        ASSERT_GE(out[0], lo);
        ASSERT_LE(out[0], hi);
        ASSERT_EQ(box_clamp(out, Tensor::vector({lo}), Tensor::vector({hi})), out);
    }
}

TEST(TopK, Examples) {
    const auto s = Tensor::vector({0.1, 0.7, 0.2});
    EXPECT_EQ(top_k(s, 1), (std::vector<std::size_t>{1}));
    EXPECT_EQ(top_k(s, 3), (std::vector<std::size_t>{1, 2, 0}));
    EXPECT_EQ(top_k(Tensor::vector({0.5, 0.5}), 1), (std::vector<std::size_t>{0}));
}

TEST(TopK, RejectsBadK) {
    const auto s = Tensor::vector({0.1, 0.7, 0.2});
    EXPECT_THROW(top_k(s, 0), std::invalid_argument);
    EXPECT_THROW(top_k(s, 4), std::invalid_argument);
    EXPECT_THROW(top_k(Tensor(Shape{2, 2}), 1), std::invalid_argument);
}

TEST(TopK, NestedAcrossK) {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(12);
        Tensor s(Shape{n});
        // coarse values so ties occur
        for (double& v : s) v = static_cast<double>(rng.below(4));
        for (std::size_t k = 1; k < n; ++k) {
            const auto a = top_k(s, k), b = top_k(s, k + 1);
            ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << "prefix property at k=" << k;
            for (std::size_t j = 1; j < b.size(); ++j) {
                ASSERT_GE(s[b[j - 1]], s[b[j]]);
                if (s[b[j - 1]] == s[b[j]]) {
                    ASSERT_LT(b[j - 1], b[j]);
                }
            }
        }
    }
}

TEST(Rng, UniformStaysInRangeAndIsReproducible) {
    Rng a(5), b(5);
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        ASSERT_EQ(u, b.uniform());
    }
    EXPECT_THROW(a.below(0), std::invalid_argument);
}
