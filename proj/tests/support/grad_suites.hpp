#pragma once

// Central finite-difference gradient suites covering every differentiable
// operation in the library: elementwise math, matmul/slicing, layer norm,
// the conv2d variants, pixel shuffle, all four attention paths, the gated
// attention block plus feedforward, deformable sampling, the separable
// deformable embedding, and the whole backbone end to end.
//
// All suites run in 64-bit. Offset-producing weights are biased away from
// zero so no bilinear sample sits on an integer-position kink, where the
// one-sided derivatives differ and central differences are meaningless.

#include <functional>
#include <string>
#include <vector>

#include "tformer/backbone.hpp"
#include "tformer/gradcheck.hpp"

namespace testutil {

struct GradSuite {
    std::string name;
    tformer::GradCheckResult res;
};

inline std::vector<GradSuite> run_grad_suites(uint64_t seed) {
    using namespace tformer;
    using T = double;
    auto rng = make_rng(seed, 17);
    auto draw = [&](Shape s, double lo = -1.0, double hi = 1.0) {
        std::uniform_real_distribution<double> uu(lo, hi);
        std::vector<T> vals(static_cast<size_t>(numel(s)));
        for (auto& x : vals) x = uu(rng);
        return Tensor<T>(s, std::move(vals));
    };

    std::vector<GradSuite> suites;
    auto add_suite = [&](const std::string& name,
                         const std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>& fn,
                         std::vector<Tensor<T>> inputs, int64_t max_coords = 0,
                         double denom_floor = 1e-6) {
        suites.push_back(
            {name, grad_check<T>(fn, std::move(inputs), T(1e-5), max_coords, denom_floor)});
    };

    add_suite("elementwise",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto a = v[0], b = v[1];
            auto t = add(mul(sigmoid(a), hardswish(b)), exp(mul_scalar(a, T(0.3))));
            t = sub(t, div(b, add_scalar(mul(a, a), T(2))));
            return mean_all(mul(t, leaky_relu(b, T(0.1))));
        },
        {draw({3, 5, 7}), draw({3, 5, 7})});

    add_suite("matmul_slice_norm",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto p = matmul(v[0], transpose2d(v[1]));                          // [4,4]
            auto q = matmul(transpose2d(slice0(p, 0, 2)), slice0(v[0], 1, 3)); // [4,6]
            return mean_all(mul(q, q));
        },
        {draw({4, 6}), draw({4, 6})});

    add_suite("layer_norm",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            return mean_all(mul(layer_norm_channels(v[0], v[1]), v[2]));
        },
        {draw({4, 3, 5}), draw({4}, 0.5, 1.5), draw({4, 3, 5})});

    add_suite("conv2d_general",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = conv2d(v[0], v[1], v[2], 1, 1, 1, MacCat::other);
            return mean_all(mul(y, y));
        },
        {draw({3, 6, 5}), draw({4, 3, 3, 3}), draw({4})});
    add_suite("conv2d_stride2",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = conv2d(v[0], v[1], v[2], 2, 1, 1, MacCat::other);
            return mean_all(mul(y, y));
        },
        {draw({2, 7, 6}), draw({3, 2, 3, 3}), draw({3})});
    add_suite("conv2d_depthwise",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = conv2d_nobias(v[0], v[1], 1, 2, 4, MacCat::other);
            return mean_all(mul(y, y));
        },
        {draw({4, 6, 5}), draw({4, 1, 5, 5})});
    add_suite("conv2d_pointwise",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = pointwise(v[0], v[1], MacCat::other);
            return mean_all(mul(y, y));
        },
        {draw({5, 4, 4}), draw({3, 5, 1, 1})});

    add_suite("pixel_shuffle_cycle",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = pixel_shuffle(pixel_unshuffle(v[0], 2), 2);
            return mean_all(mul(y, v[0]));
        },
        {draw({3, 4, 6})});

    for (int order = 1; order <= 2; ++order)
        add_suite("attention_quadratic" + std::to_string(order),
            [order](Tape<T>&, const std::vector<Var<T>>& v) {
                auto qn = normalize_tokens(v[0], T(0.5));
                auto kn = normalize_tokens(v[1], T(0.5));
                auto y = taylor_attention_quadratic(qn, kn, v[2], order);
                return mean_all(mul(y, y));
            },
            {draw({5, 9}), draw({5, 9}), draw({5, 9})});
    add_suite("attention_linear",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto qn = normalize_tokens(v[0], T(0.5));
            auto kn = normalize_tokens(v[1], T(0.5));
            auto y = taylor_attention_linear(qn, kn, v[2]);
            return mean_all(mul(y, y));
        },
        {draw({5, 9}), draw({5, 9}), draw({5, 9})});
    add_suite("attention_softmax",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto qn = normalize_tokens(v[0], T(0.5));
            auto kn = normalize_tokens(v[1], T(0.5));
            auto y = softmax_attention(qn, kn, v[2]);
            return mean_all(mul(y, y));
        },
        {draw({5, 9}), draw({5, 9}), draw({5, 9})});

    {
        AttentionConfig acfg;
        acfg.channels = 8;
        acfg.heads = 2;
        auto wrng = make_rng(seed, 23);
        auto w = init_tmsa_weights<T>(acfg, wrng);
        auto f = init_ffn_weights<T>(acfg.channels, wrng);
        std::vector<Tensor<T>> inputs;
        inputs.push_back(draw({8, 4, 4}));
        w.visit("w", [&](const std::string&, Tensor<T>& t) { inputs.push_back(t); });
        f.visit("f", [&](const std::string&, Tensor<T>& t) { inputs.push_back(t); });
        add_suite("tmsa_ffn_block",
            [acfg](Tape<T>&, const std::vector<Var<T>>& v) {
                size_t i = 1;
                TmsaWeights<Var<T>> w;
                w.ln_w = v[i++];
                w.qkv_pw = v[i++];
                w.qkv_dw = v[i++];
                for (int64_t h = 0; h < acfg.heads; ++h) {
                    w.wq.push_back(v[i++]);
                    w.wk.push_back(v[i++]);
                    w.wv.push_back(v[i++]);
                }
                for (int64_t h = 0; h < acfg.heads; ++h) {
                    w.msar_w.push_back(v[i++]);
                    w.msar_b.push_back(v[i++]);
                }
                w.out_pw = v[i++];
                FfnWeights<Var<T>> f;
                f.ln_w = v[i++];
                f.expand = v[i++];
                f.dw = v[i++];
                f.project = v[i++];
                auto y = feedforward(tmsa_block(v[0], w, acfg), f);
                return mean_all(mul(y, y));
            },
            std::move(inputs), 24);
    }

    add_suite("deform_depthwise",
        [](Tape<T>&, const std::vector<Var<T>>& v) {
            auto y = deform_depthwise(v[0], v[1], v[2], 3);
            return mean_all(mul(y, y));
        },
        {draw({2, 5, 5}), draw({18, 5, 5}, -1.3, 1.3), draw({2, 9})});
    {
        auto wrng = make_rng(seed, 29);
        auto w = init_dsdcn_weights<T>(3, 4, 3, wrng);
        w.off_pw = draw({18, 3, 1, 1}, 0.1, 0.4);
        std::vector<Tensor<T>> inputs;
        inputs.push_back(draw({3, 5, 5}));
        w.visit("w", [&](const std::string&, Tensor<T>& t) { inputs.push_back(t); });
        add_suite("dsdcn_embed",
            [](Tape<T>&, const std::vector<Var<T>>& v) {
                DsdcnWeights<Var<T>> w{v[1], v[2], v[3], v[4]};
                auto y = dsdcn_embed(v[0], w, 3);
                return mean_all(mul(y, y));
            },
            std::move(inputs), 40);
    }

    {
        NetworkConfig cfg = tiny_network_config();
        cfg.enc_blocks = {1, 1};
        cfg.enc_heads = {1, 2};
        cfg.dec_blocks = {1};
        cfg.dec_heads = {2};
        auto model = init_model<T>(cfg, seed);
        model.weights.visit("m", [&](const std::string& name, Tensor<T>& t) {
            if (name.find("off_pw") != std::string::npos) t = draw(t.shape(), 0.05, 0.3);
        });
        std::vector<Tensor<T>> inputs;
        inputs.push_back(draw({3, 8, 8}, 0.0, 1.0));
        model.weights.visit("m",
                            [&](const std::string&, Tensor<T>& t) { inputs.push_back(t); });
        add_suite("model_forward",
            [cfg](Tape<T>&, const std::vector<Var<T>>& v) {
                // Rebind positionally: map() preserves visit() order.
                size_t i = 1;
                auto dummy = init_model<T>(cfg, 1);
                auto wv = dummy.weights.map([&](const Tensor<T>&) { return v[i++]; });
                auto y = model_forward(v[0], wv, cfg);
                return mean_all(mul(y, y));
            },
            std::move(inputs), 2, 1e-3);
    }

    return suites;
}

} // namespace testutil
