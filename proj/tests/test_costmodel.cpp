// Analytic cost models: whole-model multiply accounting against
// instrumentation, closed-form parameter counts, frozen reference values for
// the separable-vs-dense deformable comparison and the two attention
// variants, and runtime scaling slopes of the streaming kernels.

#include <gtest/gtest.h>

#include "tformer/bench.hpp"
#include "tformer/cost.hpp"

using namespace tformer;

TEST(CostModel, WholeModelBreakdownMatchesInstrumentation) {
    set_num_threads(1);
    std::mt19937_64 rng(41);
    NetworkConfig cfg;
    cfg.base_channels = 4;
    cfg.enc_blocks = {1, 2};
    cfg.enc_heads = {1, 2};
    cfg.dec_blocks = {2};
    cfg.dec_heads = {1};
    cfg.refine_blocks = 1;
    cfg.refine_heads = 2;
    cfg.branch_depths = {1, 2};
    auto m = init_model<double>(cfg, 5);
    EXPECT_EQ(model_param_count(cfg), m.param_count());

    MacCounters mc;
    MacScope scope(mc);
    Tape<double> tape;
    auto wv = m.weights.map([&](const Tensor<double>& t) { return tape.leaf(t); });
    auto y =
        model_forward(tape.leaf(Tensor<double>::uniform({3, 8, 12}, 0.0, 1.0, rng)), wv, cfg);
    (void)y;
    auto want = model_cost(cfg, 8, 12);
    for (size_t c = 0; c < static_cast<size_t>(MacCat::kCount); ++c) {
        const auto cat = static_cast<MacCat>(c);
        EXPECT_EQ(mc.get(cat), want.get(cat)) << "category index " << c;
    }
}

TEST(CostModel, ParamCountsOfShippedConfigs) {
    EXPECT_EQ(model_param_count(NetworkConfig{}), 851062ull);
    EXPECT_EQ(model_param_count(tiny_network_config()), 82322ull);
    auto tiny = init_model<float>(tiny_network_config(), 0);
    EXPECT_EQ(tiny.param_count(), 82322ull);
}

TEST(CostModel, FrozenReferenceValues) {
    // separable vs dense deformable embedding at M=N=32, K=3, 64x64
    EXPECT_EQ(dsdcn_mult_count(32, 32, 3, 64, 64), 13631488ull);
    EXPECT_EQ(dense_deform_mult_count(32, 32, 3, 64 * 64), 63700992ull);
    EXPECT_EQ(dsdcn_param_count(32, 32, 3), 2176ull);
    EXPECT_EQ(dense_deform_param_count(32, 32, 3), 14400ull);
    // attention at D=32 over a 64x64 token grid
    EXPECT_EQ(tmsa_mult_count(4096, 32), 31719424ull);
    EXPECT_EQ(msa_mult_count(4096, 32), 1090519040ull);
    EXPECT_EQ(attention_crossover_tokens(32), 58);
}

TEST(CostModel, CrossoverIsTheFirstTokenCountWhereDenseAttentionLoses) {
    for (int64_t D : {8, 16, 32, 64, 128}) {
        const int64_t c = attention_crossover_tokens(D);
        EXPECT_GT(msa_mult_count(c, D), tmsa_mult_count(c, D));
        EXPECT_LE(msa_mult_count(c - 1, D), tmsa_mult_count(c - 1, D));
    }
}

TEST(Scaling, MiniRunSlopesLandNearOneAndTwo) {
    set_num_threads(1);
    auto res = scaling_experiment<double>({AttnPath::linear, AttnPath::quadratic_order1},
                                          {1024, 2048, 4096, 8192}, 8, 3, 1, 77, 0.005);
    const double sl = res.slope(AttnPath::linear, 3);
    const double sq = res.slope(AttnPath::quadratic_order1, 3);
    EXPECT_GT(sl, 0.5);
    EXPECT_LT(sl, 1.5);
    EXPECT_GT(sq, 1.6);
    EXPECT_LT(sq, 2.4);
    EXPECT_EQ(res.csv().rfind("path,n,d,trial,nanos,multiplies\n", 0), 0u);
}
