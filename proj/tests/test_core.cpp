// Core numerics: tensor construction, matmul algebra, broadcast semantics,
// multiply counters, deterministic RNG streams, and thread invariance.

#include <gtest/gtest.h>

#include "support/testutil.hpp"
#include "tformer/conv.hpp"
#include "tformer/ops.hpp"
#include "tformer/rng.hpp"
#include "tformer/threads.hpp"

using namespace tformer;
using testutil::bit_equal;
using testutil::normwise_rel_err;

TEST(Tensor, ConstructionAndShape) {
    auto z = Tensor<double>::zeros({2, 3, 4});
    EXPECT_EQ(z.numel(), 24);
    EXPECT_EQ(z.shape(), Shape({2, 3, 4}));
    for (int64_t i = 0; i < z.numel(); ++i) EXPECT_EQ(z.data()[i], 0.0);
    auto f = Tensor<double>::full({3}, 2.5);
    for (int64_t i = 0; i < 3; ++i) EXPECT_EQ(f.data()[i], 2.5);
    auto r = f.reshape({3, 1});
    EXPECT_EQ(r.shape(), Shape({3, 1}));
    EXPECT_EQ(r.data()[2], 2.5);
}

TEST(Tensor, UniformIsDeterministicPerRngState) {
    std::mt19937_64 a(5), b(5), c(6);
    auto x = Tensor<double>::uniform({4, 4}, -1, 1, a);
    auto y = Tensor<double>::uniform({4, 4}, -1, 1, b);
    auto z = Tensor<double>::uniform({4, 4}, -1, 1, c);
    EXPECT_TRUE(bit_equal(x, y));
    EXPECT_FALSE(bit_equal(x, z));
}

TEST(Rng, StreamsAreIndependentAndReproducible) {
    auto a = make_rng(42, 1), b = make_rng(42, 1), c = make_rng(42, 2), d = make_rng(43, 1);
    EXPECT_EQ(a(), b());
    auto a2 = make_rng(42, 1);
    EXPECT_NE(a2(), c());
    EXPECT_NE(make_rng(42, 1)(), d());
}

TEST(Rng, FanInInitIsBoundedAndDeterministic) {
    auto r1 = make_rng(7, 0), r2 = make_rng(7, 0);
    auto w1 = init_uniform<double>({8, 4, 3, 3}, 4 * 9, r1);
    auto w2 = init_uniform<double>({8, 4, 3, 3}, 4 * 9, r2);
    EXPECT_TRUE(bit_equal(w1, w2));
    const double bound = 1.0 / std::sqrt(36.0);
    for (int64_t i = 0; i < w1.numel(); ++i) EXPECT_LE(std::abs(w1.data()[i]), bound);
}

TEST(Matmul, AssociativityAtDoublePrecision) {
    std::mt19937_64 rng(11);
    Tape<double> t;
    auto a = t.leaf(Tensor<double>::uniform({8, 8}, -1, 1, rng));
    auto b = t.leaf(Tensor<double>::uniform({8, 8}, -1, 1, rng));
    auto c = t.leaf(Tensor<double>::uniform({8, 8}, -1, 1, rng));
    auto left = matmul(matmul(a, b), c);
    auto right = matmul(a, matmul(b, c));
    EXPECT_LT(normwise_rel_err(left.value, right.value), 1e-10);
}

TEST(Matmul, MultiplyCounterIsExact) {
    std::mt19937_64 rng(3);
    MacCounters mc;
    {
        MacScope scope(mc);
        Var<double> a(Tensor<double>::uniform({8, 9}, -1, 1, rng));
        Var<double> b(Tensor<double>::uniform({9, 3}, -1, 1, rng));
        matmul(a, b, MacCat::attn_core);
    }
    EXPECT_EQ(mc.get(MacCat::attn_core), 8u * 9u * 3u);
}

TEST(Conv, BiasBroadcastMatchesManualTiling) {
    std::mt19937_64 rng(9);
    const int64_t c = 4, h = 5, w = 6;
    auto x = Tensor<double>::uniform({c, h, w}, -1, 1, rng);
    auto bias = Tensor<double>::uniform({c}, -1, 1, rng);
    // identity 1x1 convolution + bias: output should equal x[ch] + bias[ch]
    std::vector<double> wid(size_t(c * c), 0.0);
    for (int64_t i = 0; i < c; ++i) wid[size_t(i * c + i)] = 1.0;
    Tape<double> t;
    auto y = conv2d(t.leaf(x), t.leaf(Tensor<double>(Shape{c, c, 1, 1}, std::move(wid))),
                    t.leaf(bias), 1, 0, 1, MacCat::other);
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < h * w; ++p) {
            const double want = x.data()[ch * h * w + p] + bias.data()[ch];
            EXPECT_EQ(y.value.data()[ch * h * w + p], want);
        }
}

TEST(Threads, ForwardIsBitIdenticalAcrossThreadCounts) {
    std::mt19937_64 rng(31);
    auto x = Tensor<double>::uniform({6, 16, 16}, -1, 1, rng);
    auto w = Tensor<double>::uniform({8, 6, 3, 3}, -1, 1, rng);
    set_num_threads(1);
    Tape<double> t1;
    auto y1 = conv2d_nobias(t1.leaf(x), t1.leaf(w), 1, 1, 1);
    set_num_threads(3);
    Tape<double> t3;
    auto y3 = conv2d_nobias(t3.leaf(x), t3.leaf(w), 1, 1, 1);
    set_num_threads(1);
    EXPECT_TRUE(bit_equal(y1.value, y3.value));
}
