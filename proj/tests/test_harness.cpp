// Training harness: image io, procedural data determinism, the haze
// formation model, quality metrics, the optimizer and schedule, short
// end-to-end training, and bitwise reproducibility guarantees.

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "support/testutil.hpp"
#include "tformer/metrics.hpp"
#include "tformer/ppm.hpp"
#include "tformer/train.hpp"

using namespace tformer;
using testutil::bit_equal;

namespace {

NetworkConfig micro_config() {
    NetworkConfig c;
    c.base_channels = 4;
    c.enc_blocks = {1, 1};
    c.enc_heads = {1, 2};
    c.dec_blocks = {1};
    c.dec_heads = {1};
    c.refine_blocks = 1;
    c.refine_heads = 2;
    c.branch_depths = {1, 2};
    return c;
}

} // namespace

TEST(Ppm, RoundTripQuantizesToHalfALevel) {
    auto s = synth_pair<double>(24, 32, 7, 0);
    const std::string path = ::testing::TempDir() + "roundtrip.ppm";
    save_ppm(path, s.clean);
    auto back = load_ppm<double>(path);
    EXPECT_EQ(back.shape(), s.clean.shape());
    double maxerr = 0;
    for (int64_t i = 0; i < back.numel(); ++i)
        maxerr = std::max(maxerr, std::abs(back.data()[i] - s.clean.data()[i]));
    EXPECT_LE(maxerr, 0.5 / 255.0 + 1e-9);
    std::remove(path.c_str());
}

TEST(Ppm, RejectsMissingAndMalformedFiles) {
    EXPECT_THROW(load_ppm<double>("/nonexistent/image.ppm"), std::exception);
    const std::string path = ::testing::TempDir() + "malformed.ppm";
    {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n2 2\n255\nxxxx"; // wrong magic for this reader
    }
    EXPECT_THROW(load_ppm<double>(path), std::exception);
    std::remove(path.c_str());
}

TEST(Synth, PairsAreDeterministicPerSeedAndIndex) {
    auto a = synth_pair<double>(32, 32, 11, 3);
    auto b = synth_pair<double>(32, 32, 11, 3);
    auto c = synth_pair<double>(32, 32, 11, 4);
    EXPECT_TRUE(bit_equal(a.hazy, b.hazy));
    EXPECT_TRUE(bit_equal(a.clean, b.clean));
    EXPECT_FALSE(bit_equal(a.hazy, c.hazy));
}

TEST(Synth, ValuesStayInUnitRangeWithMeaningfulDegradation) {
    auto a = synth_pair<double>(32, 32, 11, 3);
    for (int64_t i = 0; i < a.clean.numel(); ++i) {
        EXPECT_GE(a.clean.data()[i], 0.0);
        EXPECT_LE(a.clean.data()[i], 1.0);
        EXPECT_GE(a.hazy.data()[i], 0.0);
        EXPECT_LE(a.hazy.data()[i], 1.0);
    }
    const double base = psnr(a.hazy, a.clean);
    EXPECT_GT(base, 5.0);
    EXPECT_LT(base, 30.0);
}

TEST(Synth, DoubleFlipIsIdentity) {
    auto a = synth_pair<double>(32, 32, 11, 3);
    auto f = flip_image(flip_image(a.clean, true, true), true, true);
    EXPECT_TRUE(bit_equal(f, a.clean));
}

TEST(Synth, FullTransmissionLeavesTheImageUntouched) {
    auto rng = make_rng(5, 1);
    auto clean = synth_clean<double>(16, 16, rng);
    HazeParams hp; // t defaults to 1, airlight irrelevant at t=1
    EXPECT_TRUE(bit_equal(apply_haze(clean, hp), clean));
}

TEST(Synth, ScalarHazeFollowsTheFormationModel) {
    auto rng = make_rng(5, 2);
    auto clean = synth_clean<double>(8, 8, rng);
    HazeParams hp;
    hp.t_scalar = 0.5;
    hp.airlight = {0.8, 0.8, 0.8};
    auto hazy = apply_haze(clean, hp);
    for (int64_t i = 0; i < clean.numel(); ++i)
        EXPECT_NEAR(hazy.data()[i], clean.data()[i] * 0.5 + 0.8 * 0.5, 1e-15);
}

TEST(Synth, PerPixelTransmissionFieldIsRespected) {
    auto rng = make_rng(5, 3);
    auto clean = synth_clean<double>(4, 6, rng);
    HazeParams hp;
    hp.airlight = {0.6, 0.7, 0.8};
    hp.t_field.assign(24, 1.0);
    hp.t_field[5] = 0.25;
    auto hazy = apply_haze(clean, hp);
    const int64_t hw = 24;
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t p = 0; p < hw; ++p) {
            const double t = (p == 5) ? 0.25 : 1.0;
            const double a = hp.airlight[size_t(c)];
            EXPECT_NEAR(hazy.data()[c * hw + p], clean.data()[c * hw + p] * t + a * (1 - t),
                        1e-15);
        }
}

TEST(Metrics, ClosedFormValues) {
    auto rng0 = make_rng(5, 1);
    auto x = synth_clean<double>(32, 32, rng0);
    EXPECT_EQ(psnr(x, x), 99.0); // identical images cap the sentinel
    EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
    std::vector<double> v(x.data(), x.data() + x.numel());
    for (auto& y : v) y += 0.1; // mse 0.01 -> psnr 20
    Tensor<double> xo(x.shape(), std::move(v));
    EXPECT_NEAR(psnr(x, xo), 20.0, 1e-9);
    EXPECT_NEAR(psnr(x, xo), psnr(xo, x), 1e-12);
    EXPECT_NEAR(ssim(x, xo), ssim(xo, x), 1e-12);
}

TEST(Metrics, SsimDecreasesWithNoise) {
    auto rng0 = make_rng(5, 1);
    auto x = synth_clean<double>(32, 32, rng0);
    auto rng = make_rng(6, 1);
    std::normal_distribution<double> nd(0.0, 0.05);
    std::vector<double> v2(x.data(), x.data() + x.numel());
    for (auto& y : v2) y += nd(rng);
    Tensor<double> xn(x.shape(), std::move(v2));
    const double s1 = ssim(x, xn);
    std::vector<double> v3(x.data(), x.data() + x.numel());
    for (auto& y : v3) y += 4 * nd(rng);
    Tensor<double> xn2(x.shape(), std::move(v3));
    const double s2 = ssim(x, xn2);
    EXPECT_LT(s1, 1.0);
    EXPECT_LT(s2, s1);
}

TEST(Schedule, CosineEndpointsAndMonotoneRange) {
    EXPECT_NEAR(cosine_lr(0, 100, 2e-4, 1e-6), 2e-4, 1e-18);
    EXPECT_NEAR(cosine_lr(99, 100, 2e-4, 1e-6), 1e-6, 1e-18);
    const double mid = cosine_lr(50, 100, 2e-4, 1e-6);
    EXPECT_LT(mid, 2e-4);
    EXPECT_GT(mid, 1e-6);
}

TEST(Optimizer, AdamDrivesAQuadraticBowlToZero) {
    Tensor<double> p = Tensor<double>::full({4}, 1.0);
    std::vector<Tensor<double>*> ps{&p};
    Adam<double> opt;
    for (int i = 0; i < 400; ++i) {
        std::vector<std::vector<double>> g(1);
        g[0].resize(4);
        for (int j = 0; j < 4; ++j) g[0][size_t(j)] = 2.0 * p.data()[j];
        opt.step(ps, g, 0.05);
    }
    for (int j = 0; j < 4; ++j) EXPECT_LT(std::abs(p.data()[j]), 1e-2);
}

TEST(Train, DatasetsAreBitIdenticalPerSeed) {
    auto a = make_dataset<double>(16, 9, 0, 3);
    auto b = make_dataset<double>(16, 9, 0, 3);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_TRUE(bit_equal(a[i].hazy, b[i].hazy));
        EXPECT_TRUE(bit_equal(a[i].clean, b[i].clean));
    }
}

TEST(Train, ShortRunLearnsAndCheckpointRestoresBitExact) {
    set_num_threads(1);
    auto cfg = micro_config();
    auto model = init_model<float>(cfg, 42);
    TrainConfig tc;
    tc.iters = 30;
    tc.batch = 1;
    tc.crop = 32;
    tc.train_pairs = 8;
    tc.eval_pairs = 2;
    tc.seed = 42;
    tc.log_every = 1000;
    tc.checkpoint = ::testing::TempDir() + "short_train.tfw";
    auto res = train(model, tc);
    ASSERT_EQ(res.losses.size(), 30u);
    double head = 0, tail = 0;
    for (int i = 0; i < 5; ++i) {
        head += res.losses[size_t(i)];
        tail += res.losses[res.losses.size() - 1 - size_t(i)];
    }
    EXPECT_LT(tail, head);

    auto model2 = init_model<float>(cfg, 99);
    load_weights(tc.checkpoint, model2.weights);
    auto probe = synth_pair<float>(32, 32, 42, 100);
    EXPECT_TRUE(bit_equal(run_model(model, probe.hazy), run_model(model2, probe.hazy)));
    std::remove(tc.checkpoint.c_str());
}

TEST(Train, LossCurveIsBitReproducibleAtFixedSeed) {
    set_num_threads(1);
    auto cfg = micro_config();
    TrainConfig tc;
    tc.iters = 6;
    tc.batch = 1;
    tc.crop = 16;
    tc.train_pairs = 4;
    tc.eval_pairs = 1;
    tc.seed = 7;
    tc.log_every = 1000;
    auto m1 = init_model<double>(cfg, 42);
    auto m2 = init_model<double>(cfg, 42);
    auto r1 = train(m1, tc);
    auto r2 = train(m2, tc);
    ASSERT_EQ(r1.losses.size(), r2.losses.size());
    for (size_t i = 0; i < r1.losses.size(); ++i) EXPECT_EQ(r1.losses[i], r2.losses[i]);
    EXPECT_EQ(r1.eval_metrics.psnr_output, r2.eval_metrics.psnr_output);
}

TEST(Train, LossCurveIsBitIdenticalAcrossThreadCounts) {
    auto cfg = micro_config();
    TrainConfig tc;
    tc.iters = 5;
    tc.batch = 1;
    tc.crop = 16;
    tc.train_pairs = 4;
    tc.eval_pairs = 1;
    tc.seed = 11;
    tc.log_every = 1000;
    set_num_threads(1);
    auto m1 = init_model<float>(cfg, 13);
    auto r1 = train(m1, tc);
    set_num_threads(3);
    auto m2 = init_model<float>(cfg, 13);
    auto r2 = train(m2, tc);
    set_num_threads(1);
    for (size_t i = 0; i < r1.losses.size(); ++i) EXPECT_EQ(r1.losses[i], r2.losses[i]);
}
