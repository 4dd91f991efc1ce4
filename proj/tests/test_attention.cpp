// Attention paths: token normalization, the linear/quadratic algebraic
// identity, streaming kernels, multiply accounting, kernel approximation
// bounds, permutation equivariance, and the gated block.

#include <gtest/gtest.h>

#include <cmath>

#include "support/testutil.hpp"
#include "tformer/block.hpp"
#include "tformer/gradcheck.hpp"

using namespace tformer;
using testutil::bit_equal;
using testutil::normwise_rel_err;

TEST(NormalizeTokens, ClampsColumnNormsToRadiusAndKeepsZeros) {
    std::mt19937_64 rng(7);
    Tape<double> tape;
    auto q = Tensor<double>::uniform({4, 6}, -2.0, 2.0, rng);
    std::vector<double> qz(q.data(), q.data() + q.numel());
    for (int64_t r = 0; r < 4; ++r) qz[size_t(r * 6 + 3)] = 0.0; // zero token 3
    auto qv = tape.leaf(Tensor<double>(Shape{4, 6}, std::move(qz)));
    auto qn = normalize_tokens(qv, 0.5);
    for (int64_t j = 0; j < 6; ++j) {
        double s = 0;
        for (int64_t r = 0; r < 4; ++r)
            s += qn.value.data()[r * 6 + j] * qn.value.data()[r * 6 + j];
        if (j == 3)
            EXPECT_EQ(s, 0.0);
        else
            EXPECT_NEAR(std::sqrt(s), 0.5, 1e-12);
    }
}

TEST(NormalizeTokens, GradientMatchesFiniteDifferences) {
    std::mt19937_64 r2(11);
    auto x0 = Tensor<double>::uniform({3, 5}, 0.5, 1.5, r2);
    auto wt = Tensor<double>::uniform({3, 5}, -1.0, 1.0, r2);
    auto res = grad_check<double>(
        [&](Tape<double>& t, const std::vector<Var<double>>& in) {
            return sum_all(mul(normalize_tokens(in[0], 0.5), t.leaf(wt)));
        },
        {x0});
    EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(Attention, LinearEqualsQuadraticOrderOne) {
    std::mt19937_64 rng(21);
    const int64_t d = 8, n = 64;
    Tape<double> tape;
    auto q = tape.leaf(Tensor<double>::uniform({d, n}, -1.0, 1.0, rng));
    auto k = tape.leaf(Tensor<double>::uniform({d, n}, -1.0, 1.0, rng));
    auto v = tape.leaf(Tensor<double>::uniform({d, n}, -1.0, 1.0, rng));
    auto qn = normalize_tokens(q, 0.5);
    auto kn = normalize_tokens(k, 0.5);
    auto lin = taylor_attention_linear(qn, kn, v);
    auto qud = taylor_attention_quadratic(qn, kn, v, 1);
    EXPECT_LT(normwise_rel_err(lin.value, qud.value), 1e-12);
}

TEST(Attention, StreamingKernelsMatchComposedPaths) {
    std::mt19937_64 rng(22);
    const int64_t d = 8, n = 64;
    Tape<double> tape;
    auto qn = normalize_tokens(tape.leaf(Tensor<double>::uniform({d, n}, -1.0, 1.0, rng)), 0.5);
    auto kn = normalize_tokens(tape.leaf(Tensor<double>::uniform({d, n}, -1.0, 1.0, rng)), 0.5);
    auto v = tape.leaf(Tensor<double>::uniform({d, n}, -1.0, 1.0, rng));
    std::vector<double> out(size_t(d * n));

    auto lin = taylor_attention_linear(qn, kn, v);
    attention_stream(AttnPath::linear, d, n, qn.value.data(), kn.value.data(), v.value.data(),
                     out.data());
    EXPECT_LT(normwise_rel_err(Tensor<double>(Shape{d, n}, std::vector<double>(out)), lin.value),
              1e-13);

    auto q1 = taylor_attention_quadratic(qn, kn, v, 1);
    attention_stream(AttnPath::quadratic_order1, d, n, qn.value.data(), kn.value.data(),
                     v.value.data(), out.data());
    EXPECT_LT(normwise_rel_err(Tensor<double>(Shape{d, n}, std::vector<double>(out)), q1.value),
              1e-13);

    auto q2 = taylor_attention_quadratic(qn, kn, v, 2);
    attention_stream(AttnPath::quadratic_order2, d, n, qn.value.data(), kn.value.data(),
                     v.value.data(), out.data());
    EXPECT_LT(normwise_rel_err(Tensor<double>(Shape{d, n}, std::vector<double>(out)), q2.value),
              1e-13);

    auto sm = softmax_attention(qn, kn, v);
    attention_stream(AttnPath::softmax, d, n, qn.value.data(), kn.value.data(), v.value.data(),
                     out.data());
    EXPECT_LT(normwise_rel_err(Tensor<double>(Shape{d, n}, std::vector<double>(out)), sm.value),
              1e-12);
}

TEST(Attention, StreamingLinearMultiplyCountIsExact) {
    const int64_t d = 8, n = 64;
    MacCounters mc;
    MacScope scope(mc);
    std::vector<double> q(size_t(d * n), 0.01), k(size_t(d * n), 0.02), v(size_t(d * n), 0.5),
        out(size_t(d * n));
    attention_stream(AttnPath::linear, d, n, q.data(), k.data(), v.data(), out.data());
    EXPECT_EQ(mc.get(MacCat::attn_core), uint64_t(2 * n * d * d));
    EXPECT_EQ(mc.get(MacCat::attn_denominator), uint64_t(n * d));
    EXPECT_EQ(mc.get(MacCat::attn_divide), uint64_t(n * d));
}

TEST(Attention, SingleTokenIsIdentity) {
    std::mt19937_64 rng(5);
    const int64_t d = 8;
    Tape<double> tape;
    auto qn = normalize_tokens(tape.leaf(Tensor<double>::uniform({d, 1}, -1.0, 1.0, rng)), 0.5);
    auto kn = normalize_tokens(tape.leaf(Tensor<double>::uniform({d, 1}, -1.0, 1.0, rng)), 0.5);
    auto v = tape.leaf(Tensor<double>::uniform({d, 1}, -1.0, 1.0, rng));
    // One key: softmax weight is exp(l)/exp(l) == 1, so the output is v bit
    // for bit; the polynomial paths divide (w*v) by w and may round once.
    EXPECT_TRUE(bit_equal(softmax_attention(qn, kn, v).value, v.value));
    EXPECT_LT(normwise_rel_err(taylor_attention_linear(qn, kn, v).value, v.value), 1e-14);
    EXPECT_LT(normwise_rel_err(taylor_attention_quadratic(qn, kn, v, 2).value, v.value), 1e-14);
}

// With entries drawn from a small dyadic set every product and partial sum is
// exactly representable, so reordering the token sum cannot round differently
// and the equivariance check can demand exact equality.
TEST(Attention, PermutationEquivarianceIsExactOnDyadicInputs) {
    std::mt19937_64 rng(17);
    const int64_t d = 4, n = 24;
    const double qvals[] = {0.0, 0.25};
    const double kvals[] = {0.25, 0.5};
    const double vvals[] = {-1.0, -0.5, 0.5, 1.0};
    std::uniform_int_distribution<int> pick2(0, 1), pick4(0, 3);
    std::vector<double> q(size_t(d * n)), k(size_t(d * n)), v(size_t(d * n));
    for (auto& x : q) x = qvals[pick2(rng)];
    for (auto& x : k) x = kvals[pick2(rng)];
    for (auto& x : v) x = vvals[pick4(rng)];

    std::vector<int64_t> perm(size_t(n));
    for (int64_t j = 0; j < n; ++j) perm[size_t(j)] = j;
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permute_cols = [&](const std::vector<double>& src) {
        std::vector<double> dst(src.size());
        for (int64_t r = 0; r < d; ++r)
            for (int64_t j = 0; j < n; ++j)
                dst[size_t(r * n + j)] = src[size_t(r * n + perm[size_t(j)])];
        return dst;
    };

    Tape<double> t1, t2;
    auto out1 = taylor_attention_linear(t1.leaf(Tensor<double>(Shape{d, n}, permute_cols(q))),
                                        t1.leaf(Tensor<double>(Shape{d, n}, permute_cols(k))),
                                        t1.leaf(Tensor<double>(Shape{d, n}, permute_cols(v))));
    auto out2 = taylor_attention_linear(t2.leaf(Tensor<double>(Shape{d, n}, std::vector<double>(q))),
                                        t2.leaf(Tensor<double>(Shape{d, n}, std::vector<double>(k))),
                                        t2.leaf(Tensor<double>(Shape{d, n}, std::vector<double>(v))));
    // attention(perm(x)) must equal perm(attention(x)) exactly
    for (int64_t r = 0; r < d; ++r)
        for (int64_t j = 0; j < n; ++j)
            ASSERT_EQ(out1.value.data()[r * n + j],
                      out2.value.data()[r * n + perm[size_t(j)]]);
}

// Worst-case relative error of the polynomial kernels against exp over the
// closed logit interval [-0.25, 0.25]; the supremum sits at the left
// endpoint for both orders and the order-2 bound is ~12x tighter.
TEST(Attention, KernelApproximationWorstCase) {
    auto rel1 = [](double l) { return std::abs((1 + l) - std::exp(l)) / std::exp(l); };
    auto rel2 = [](double l) {
        return std::abs((1 + l + 0.5 * l * l) - std::exp(l)) / std::exp(l);
    };
    double worst1 = 0, worst2 = 0;
    for (int i = -250; i <= 250; ++i) {
        worst1 = std::max(worst1, rel1(i / 1000.0));
        worst2 = std::max(worst2, rel2(i / 1000.0));
    }
    EXPECT_NEAR(worst1, 1.0 - 0.75 * std::exp(0.25), 1e-15);
    EXPECT_NEAR(worst1, 0.036980937484194, 1e-12);
    EXPECT_NEAR(worst2, 0.78125 * std::exp(0.25) - 1.0, 1e-15);
    EXPECT_NEAR(worst2, 0.003144856787298, 1e-12);
    EXPECT_LT(worst2, worst1 / 10);
}

TEST(Attention, TightExpMatchesStdExpOnRestrictedDomain) {
    double worst = 0;
    for (int i = -281; i <= 281; ++i) {
        double x = i / 1000.0;
        worst = std::max(worst, std::abs(detail::exp_tight(x) - std::exp(x)) / std::exp(x));
    }
    EXPECT_LT(worst, 3e-16);
}

TEST(TmsaBlock, ShapeAndMultiplyAccounting) {
    std::mt19937_64 rng(23);
    AttentionConfig cfg;
    cfg.channels = 8;
    cfg.heads = 1;
    cfg.gate_enabled = false;
    auto w = init_tmsa_weights<double>(cfg, rng);
    MacCounters mc;
    MacScope scope(mc);
    Tape<double> tape;
    auto wv = w.map([&](const Tensor<double>& t) { return tape.param(t); });
    auto x = tape.leaf(Tensor<double>::uniform({8, 6, 7}, -1.0, 1.0, rng));
    auto y = tmsa_block(x, wv, cfg);
    EXPECT_EQ(y.shape(), Shape({8, 6, 7}));
    const int64_t n = 42;
    uint64_t counted = mc.get(MacCat::qkv_pointwise) + mc.get(MacCat::head_projection) +
                       mc.get(MacCat::attn_core) + mc.get(MacCat::attn_denominator) +
                       mc.get(MacCat::attn_divide) + mc.get(MacCat::out_projection);
    EXPECT_EQ(counted, attn_macs::tmsa_counted(n, 8, 8));
    EXPECT_EQ(mc.get(MacCat::qkv_depthwise), attn_macs::qkv_depthwise(n, 8, 3));
    EXPECT_EQ(mc.get(MacCat::qk_normalize), attn_macs::qk_normalize(n, 8));
}

TEST(TmsaBlock, GateChangesOutputButNotShape) {
    std::mt19937_64 rng(29);
    AttentionConfig cfg;
    cfg.channels = 8;
    cfg.heads = 4;
    auto w = init_tmsa_weights<double>(cfg, rng);
    auto x0 = Tensor<double>::uniform({8, 5, 5}, -1.0, 1.0, rng);
    Tape<double> t1;
    auto y1 = tmsa_block(t1.leaf(x0),
                         w.map([&](const Tensor<double>& t) { return t1.leaf(t); }), cfg);
    cfg.gate_enabled = false;
    Tape<double> t2;
    auto y2 = tmsa_block(t2.leaf(x0),
                         w.map([&](const Tensor<double>& t) { return t2.leaf(t); }), cfg);
    EXPECT_EQ(y1.shape(), y2.shape());
    EXPECT_GT(normwise_rel_err(y1.value, y2.value), 1e-6);
}

TEST(MsarGate, OutputsAreStrictlyInsideUnitInterval) {
    std::mt19937_64 rng(31);
    AttentionConfig cfg;
    cfg.channels = 8;
    cfg.heads = 2;
    auto w = init_tmsa_weights<double>(cfg, rng);
    Tape<double> tape;
    std::vector<Var<double>> qn, kn, mw, mb;
    const int64_t hs = 5, ws = 6, n = hs * ws, dh = 4;
    for (int64_t h = 0; h < cfg.heads; ++h) {
        qn.push_back(tape.leaf(Tensor<double>::uniform({dh, n}, -0.5, 0.5, rng)));
        kn.push_back(tape.leaf(Tensor<double>::uniform({dh, n}, -0.5, 0.5, rng)));
        mw.push_back(tape.leaf(w.msar_w[size_t(h)]));
        mb.push_back(tape.leaf(w.msar_b[size_t(h)]));
    }
    auto g = msar_gate(qn, kn, mw, mb, hs, ws, cfg);
    for (int64_t i = 0; i < g.value.numel(); ++i) {
        EXPECT_GT(g.value.data()[i], 0.0);
        EXPECT_LT(g.value.data()[i], 1.0);
    }
}
