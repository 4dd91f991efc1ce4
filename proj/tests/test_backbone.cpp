// Backbone assembly: branch fusion, config validation and text round trip,
// the residual identity at initialization, gradient coverage of every
// parameter tensor, and checkpoint serialization.

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "support/testutil.hpp"
#include "tformer/gradcheck.hpp"
#include "tformer/serialize.hpp"

using namespace tformer;
using testutil::bit_equal;
using testutil::normwise_rel_err;

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

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

} // namespace

TEST(Skff, SingleBranchIsExactIdentity) {
    std::mt19937_64 rng(31);
    auto w = init_skff_weights<double>(8, 1, rng);
    Tape<double> tape;
    auto wv = w.map([&](const Tensor<double>& t) { return tape.leaf(t); });
    auto x = tape.leaf(Tensor<double>::uniform({8, 5, 4}, -1.0, 1.0, rng));
    auto y = skff_fuse<double>({x}, wv);
    EXPECT_TRUE(bit_equal(y.value, x.value));
}

TEST(Skff, DuplicateBranchesFuseBackToTheInput) {
    std::mt19937_64 rng(32);
    auto w = init_skff_weights<double>(6, 2, rng);
    Tape<double> tape;
    auto wv = w.map([&](const Tensor<double>& t) { return tape.leaf(t); });
    auto x = tape.leaf(Tensor<double>::uniform({6, 4, 5}, -1.0, 1.0, rng));
    auto y = skff_fuse<double>({x, x}, wv);
    // per-channel branch weights come from a softmax, so they sum to one
    EXPECT_LT(normwise_rel_err(y.value, x.value), 1e-14);
}

TEST(Skff, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(33);
    auto w = init_skff_weights<double>(6, 2, rng);
    auto x0 = Tensor<double>::uniform({6, 4, 4}, -1.0, 1.0, rng);
    auto x1 = Tensor<double>::uniform({6, 4, 4}, -1.0, 1.0, rng);
    auto lw = Tensor<double>::uniform({6, 4, 4}, 0.5, 1.5, rng);
    std::vector<Tensor<double>> inputs{x0, x1};
    w.visit("s", [&](const std::string&, Tensor<double>& t) { inputs.push_back(t); });
    auto res = grad_check<double>(
        [&](Tape<double>& t, const std::vector<Var<double>>& in) {
            size_t i = 2;
            auto wv = w.map([&](const Tensor<double>&) { return in[i++]; });
            return sum_all(mul(skff_fuse<double>({in[0], in[1]}, wv), t.leaf(lw)));
        },
        inputs, 1e-5, 17);
    EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(Config, TextRoundTripAndUnknownKeyRejection) {
    auto c = micro_config();
    auto text = config_to_text(c);
    auto c2 = config_from_text(text);
    EXPECT_EQ(config_to_text(c2), text);
    EXPECT_THROW(config_from_text("bogus_key=1\n"), std::exception);
}

TEST(Config, ValidationRejectsInconsistentShapes) {
    auto c = micro_config();
    c.enc_heads = {1};
    EXPECT_THROW(c.validate(), std::exception);
    auto c3 = micro_config();
    c3.dec_blocks = {1, 1};
    EXPECT_THROW(c3.validate(), std::exception);
}

TEST(Model, InitializationIsDeterministicPerSeed) {
    auto cfg = micro_config();
    auto a = init_model<float>(cfg, 77);
    auto b = init_model<float>(cfg, 77);
    auto c = init_model<float>(cfg, 78);
    bool same = true, diff = false;
    std::vector<Tensor<float>*> ta, tb, tc;
    a.weights.visit("m", [&](const std::string&, Tensor<float>& t) { ta.push_back(&t); });
    b.weights.visit("m", [&](const std::string&, Tensor<float>& t) { tb.push_back(&t); });
    c.weights.visit("m", [&](const std::string&, Tensor<float>& t) { tc.push_back(&t); });
    ASSERT_EQ(ta.size(), tb.size());
    for (size_t i = 0; i < ta.size(); ++i) {
        same = same && bit_equal(*ta[i], *tb[i]);
        diff = diff || !bit_equal(*ta[i], *tc[i]);
    }
    EXPECT_TRUE(same);
    EXPECT_TRUE(diff);
}

TEST(Model, FreshModelIsTheIdentityMap) {
    // the head conv starts at zero, so the residual path passes the image
    // through untouched — bit for bit, at any multiple-of-stride size
    std::mt19937_64 rng(41);
    auto cfg = micro_config();
    auto m = init_model<double>(cfg, 123);
    Tape<double> tape;
    auto wv = m.weights.map([&](const Tensor<double>& t) { return tape.param(t); });
    auto x = tape.leaf(Tensor<double>::uniform({3, 8, 8}, 0.0, 1.0, rng));
    auto y = model_forward(x, wv, cfg);
    EXPECT_TRUE(bit_equal(y.value, x.value));
}

TEST(Model, ForwardPreservesNonSquareShapes) {
    std::mt19937_64 rng(42);
    auto cfg = tiny_network_config(); // three scales: needs multiples of 4
    auto m = init_model<float>(cfg, 9);
    auto x = Tensor<float>::uniform({3, 96, 128}, 0.0f, 1.0f, rng);
    auto y = run_model(m, x);
    EXPECT_EQ(y.shape(), Shape({3, 96, 128}));
    EXPECT_TRUE(bit_equal(y, x)); // identity at init, regardless of size
}

TEST(Model, RejectsIndivisibleInputSizes) {
    auto cfg = micro_config(); // two scales: needs multiples of 2
    auto m = init_model<float>(cfg, 9);
    auto x = Tensor<float>::zeros({3, 7, 8});
    EXPECT_THROW(run_model(m, x), std::exception);
}

TEST(Model, EveryParameterReceivesGradient) {
    auto cfg = micro_config();
    auto m = init_model<double>(cfg, 124);
    std::mt19937_64 r2(77);
    // non-zero head and offsets so gradient reaches every code path
    m.weights.final_conv = Tensor<double>::uniform({3, 8, 3, 3}, -0.2, 0.2, r2);
    m.weights.visit("m", [&](const std::string& name, Tensor<double>& t) {
        if (name.find("off_pw") != std::string::npos)
            t = Tensor<double>::uniform(t.shape(), 0.05, 0.3, r2);
    });
    auto x0 = Tensor<double>::uniform({3, 8, 8}, 0.1, 0.9, r2);
    auto target = Tensor<double>::uniform({3, 8, 8}, 0.1, 0.9, r2);

    Tape<double> tape;
    auto wv = m.weights.map([&](const Tensor<double>& t) { return tape.param(t); });
    auto loss = sum_all(abs(sub(model_forward(tape.leaf(x0), wv, cfg), Var<double>(target))));
    tape.backward(loss);

    std::vector<std::string> dead;
    wv.visit("m", [&](const std::string& name, Var<double>& v) {
        const auto g = tape.grad(v);
        bool any = false;
        for (int64_t i = 0; i < g.numel(); ++i) any = any || g.data()[i] != 0.0;
        if (!any) dead.push_back(name);
    });
    EXPECT_TRUE(dead.empty()) << "tensors with all-zero gradients: " << [&] {
        std::string s;
        for (const auto& n : dead) s += n + " ";
        return s;
    }();
}

TEST(Model, FullGradientCheckOnSampledCoordinates) {
    auto cfg = micro_config();
    auto m = init_model<double>(cfg, 124);
    std::mt19937_64 r2(77);
    m.weights.final_conv = Tensor<double>::uniform({3, 8, 3, 3}, -0.2, 0.2, r2);
    m.weights.visit("m", [&](const std::string& name, Tensor<double>& t) {
        if (name.size() > 7 && name.substr(name.size() - 7) == ".off_pw")
            t = Tensor<double>::uniform(t.shape(), -0.25, 0.25, r2);
    });
    auto x0 = Tensor<double>::uniform({3, 8, 8}, 0.1, 0.9, r2);
    auto lw = Tensor<double>::uniform({3, 8, 8}, 0.5, 1.5, r2);
    std::vector<Tensor<double>> inputs{x0};
    m.weights.visit("m", [&](const std::string&, Tensor<double>& t) { inputs.push_back(t); });
    auto res = grad_check<double>(
        [&](Tape<double>& t, const std::vector<Var<double>>& in) {
            size_t i = 1;
            auto wv = m.weights.map([&](const Tensor<double>&) { return in[i++]; });
            return sum_all(mul(model_forward(in[0], wv, cfg), t.leaf(lw)));
        },
        inputs, 1e-5, 2, 1e-3);
    EXPECT_LT(res.max_rel_err, 2e-5);
}

TEST(Serialize, RoundTripRestoresOutputsBitExact) {
    auto cfg = micro_config();
    auto m1 = init_model<float>(cfg, 200);
    const std::string path = ::testing::TempDir() + "weights_roundtrip.tfw";
    save_weights(path, m1.weights);
    auto m2 = init_model<float>(cfg, 999);
    load_weights(path, m2.weights);
    std::mt19937_64 r2(3);
    auto x0 = Tensor<float>::uniform({3, 8, 8}, 0.0f, 1.0f, r2);
    EXPECT_TRUE(bit_equal(run_model(m1, x0), run_model(m2, x0)));

    // a second save of the loaded weights reproduces the file byte for byte
    const std::string path2 = ::testing::TempDir() + "weights_roundtrip2.tfw";
    save_weights(path2, m2.weights);
    EXPECT_EQ(slurp(path), slurp(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST(Serialize, MismatchedArchitectureFailsLoudly) {
    auto cfg = micro_config();
    auto m1 = init_model<float>(cfg, 200);
    const std::string path = ::testing::TempDir() + "weights_mismatch.tfw";
    save_weights(path, m1.weights);
    auto cfg3 = micro_config();
    cfg3.base_channels = 8;
    auto m3 = init_model<float>(cfg3, 1);
    EXPECT_THROW(load_weights(path, m3.weights), std::exception);
    EXPECT_THROW(load_weights("/nonexistent/dir/w.tfw", m1.weights), std::exception);
    std::remove(path.c_str());
}
