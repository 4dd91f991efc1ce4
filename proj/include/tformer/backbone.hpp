#pragma once

// Multi-scale encoder/decoder restoration network. A shallow 3x3 conv lifts
// the image to base width, then every stage embeds its input through parallel
// deformable-conv branches, runs each branch through its own attention and
// feedforward blocks, and fuses branches selectively. Scale transitions are
// 1x1 projections around pixel (un)shuffle, decoder stages concatenate
// encoder skips (reduced 2:1 except at full resolution), and a
// zero-initialized 3x3 head makes the network start as the identity:
// output = input + head(features).

#include "tformer/block.hpp"
#include "tformer/config.hpp"
#include "tformer/patch_embed.hpp"
#include "tformer/pixel_shuffle.hpp"
#include "tformer/skff.hpp"

namespace tformer {

template <class E>
struct StageWeights {
    MultiScaleEmbedWeights<E> embed;
    std::vector<std::vector<TmsaWeights<E>>> attn; // [branch][block]
    std::vector<std::vector<FfnWeights<E>>> ffn;   // [branch][block]
    SkffWeights<E> skff;

    template <class F>
    void visit(const std::string& p, F&& f) {
        embed.visit(p + ".embed", f);
        for (size_t b = 0; b < attn.size(); ++b)
            for (size_t k = 0; k < attn[b].size(); ++k) {
                const std::string q = p + ".b" + std::to_string(b) + ".k" + std::to_string(k);
                attn[b][k].visit(q + ".attn", f);
                ffn[b][k].visit(q + ".ffn", f);
            }
        skff.visit(p + ".skff", f);
    }
    template <class F>
    auto map(F&& f) const {
        StageWeights<decltype(f(skff.squeeze))> r;
        r.embed = embed.map(f);
        for (size_t b = 0; b < attn.size(); ++b) {
            r.attn.emplace_back();
            r.ffn.emplace_back();
            for (size_t k = 0; k < attn[b].size(); ++k) {
                r.attn.back().push_back(attn[b][k].map(f));
                r.ffn.back().push_back(ffn[b][k].map(f));
            }
        }
        r.skff = skff.map(f);
        return r;
    }
};

template <class E>
struct ModelWeights {
    E shallow; // [base, in, 3, 3] feature-extraction front end
    std::vector<StageWeights<E>> enc;
    std::vector<E> down; // [c/2, c, 1, 1] before each unshuffle
    std::vector<StageWeights<E>> dec;
    std::vector<E> up;          // [2c, c, 1, 1] before each shuffle
    std::vector<E> skip_reduce; // [c, 2c, 1, 1]; absent for the last decoder stage
    StageWeights<E> refine;
    E final_conv; // [out, 2*base, 3, 3], zero-initialized

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".shallow", shallow);
        for (size_t i = 0; i < enc.size(); ++i) enc[i].visit(p + ".enc" + std::to_string(i), f);
        for (size_t i = 0; i < down.size(); ++i) f(p + ".down" + std::to_string(i), down[i]);
        for (size_t j = 0; j < dec.size(); ++j) dec[j].visit(p + ".dec" + std::to_string(j), f);
        for (size_t j = 0; j < up.size(); ++j) f(p + ".up" + std::to_string(j), up[j]);
        for (size_t j = 0; j < skip_reduce.size(); ++j)
            f(p + ".skip" + std::to_string(j), skip_reduce[j]);
        refine.visit(p + ".refine", f);
        f(p + ".final", final_conv);
    }
    template <class F>
    auto map(F&& f) const {
        ModelWeights<decltype(f(final_conv))> r;
        r.shallow = f(shallow);
        for (const auto& s : enc) r.enc.push_back(s.map(f));
        for (const auto& t : down) r.down.push_back(f(t));
        for (const auto& s : dec) r.dec.push_back(s.map(f));
        for (const auto& t : up) r.up.push_back(f(t));
        for (const auto& t : skip_reduce) r.skip_reduce.push_back(f(t));
        r.refine = refine.map(f);
        r.final_conv = f(final_conv);
        return r;
    }
};

inline AttentionConfig stage_attn_config(const NetworkConfig& c, int64_t width, int64_t heads) {
    AttentionConfig a;
    a.channels = width;
    a.heads = heads;
    a.qkv_kernel = c.qkv_kernel;
    a.msar_kernels = c.msar_kernels;
    a.norm_radius = c.norm_radius;
    a.gate_enabled = c.gate_enabled;
    return a;
}
inline EmbedConfig stage_embed_config(const NetworkConfig& c, int64_t in_c, int64_t width) {
    EmbedConfig e;
    e.in_channels = in_c;
    e.out_channels = width;
    e.kernel = c.embed_kernel;
    e.branch_depths = c.branch_depths;
    e.offset_clamp = c.offset_clamp;
    return e;
}

template <class T>
StageWeights<Tensor<T>> init_stage_weights(const NetworkConfig& c, int64_t in_c, int64_t width,
                                           int64_t heads, int64_t blocks, std::mt19937_64& rng) {
    StageWeights<Tensor<T>> s;
    s.embed = init_embed_weights<T>(stage_embed_config(c, in_c, width), rng);
    const auto acfg = stage_attn_config(c, width, heads);
    for (size_t b = 0; b < c.branch_depths.size(); ++b) {
        s.attn.emplace_back();
        s.ffn.emplace_back();
        for (int64_t k = 0; k < blocks; ++k) {
            s.attn.back().push_back(init_tmsa_weights<T>(acfg, rng));
            s.ffn.back().push_back(init_ffn_weights<T>(width, rng));
        }
    }
    s.skff = init_skff_weights<T>(width, static_cast<int64_t>(c.branch_depths.size()), rng);
    return s;
}

template <class T>
struct Model {
    NetworkConfig cfg;
    ModelWeights<Tensor<T>> weights;

    uint64_t param_count() {
        uint64_t n = 0;
        weights.visit("m", [&](const std::string&, Tensor<T>& t) { n += uint64_t(t.numel()); });
        return n;
    }
};

template <class T>
Model<T> init_model(const NetworkConfig& cfg, uint64_t seed) {
    cfg.validate();
    auto rng = make_rng(seed, 0);
    Model<T> m;
    m.cfg = cfg;
    m.weights.shallow =
        init_uniform<T>({cfg.base_channels, cfg.in_channels, 3, 3}, cfg.in_channels * 9, rng);
    const int64_t S = cfg.scales();
    for (int64_t i = 0; i < S; ++i) {
        const int64_t w = cfg.enc_width(i);
        m.weights.enc.push_back(init_stage_weights<T>(cfg, w, w, cfg.enc_heads[size_t(i)],
                                                      cfg.enc_blocks[size_t(i)], rng));
        if (i + 1 < S)
            m.weights.down.push_back(init_uniform<T>({w / 2, w, 1, 1}, w, rng));
    }
    for (int64_t j = 0; j < S - 1; ++j) {
        const int64_t cur = (j == 0) ? cfg.enc_width(S - 1) : cfg.dec_width(j - 1);
        m.weights.up.push_back(init_uniform<T>({2 * cur, cur, 1, 1}, cur, rng));
        const int64_t cat_w = cur; // cur/2 up-sampled + cur/2 skip
        if (j != S - 2)
            m.weights.skip_reduce.push_back(init_uniform<T>({cat_w / 2, cat_w, 1, 1}, cat_w, rng));
        const int64_t w = cfg.dec_width(j);
        m.weights.dec.push_back(
            init_stage_weights<T>(cfg, w, w, cfg.dec_heads[size_t(j)], cfg.dec_blocks[size_t(j)], rng));
    }
    m.weights.refine = init_stage_weights<T>(cfg, 2 * cfg.base_channels, 2 * cfg.base_channels,
                                             cfg.refine_heads, cfg.refine_blocks, rng);
    m.weights.final_conv = Tensor<T>::zeros({cfg.out_channels, 2 * cfg.base_channels, 3, 3});
    return m;
}

template <class T>
Var<T> stage_forward(const Var<T>& x, const StageWeights<Var<T>>& w, const NetworkConfig& cfg,
                     int64_t in_c, int64_t width, int64_t heads) {
    const auto ecfg = stage_embed_config(cfg, in_c, width);
    const auto acfg = stage_attn_config(cfg, width, heads);
    auto feats = multi_scale_embed(x, w.embed, ecfg);
    for (size_t b = 0; b < feats.size(); ++b)
        for (size_t k = 0; k < w.attn[b].size(); ++k) {
            feats[b] = tmsa_block(feats[b], w.attn[b][k], acfg);
            feats[b] = feedforward(feats[b], w.ffn[b][k]);
        }
    return skff_fuse(feats, w.skff);
}

template <class T>
Var<T> model_forward(const Var<T>& image, const ModelWeights<Var<T>>& w,
                     const NetworkConfig& cfg) {
    cfg.validate();
    check(cfg.in_channels == cfg.out_channels, "model_forward: residual head needs in == out");
    const int64_t S = cfg.scales();
    const int64_t H = image.shape()[1], W = image.shape()[2];
    const int64_t div = int64_t(1) << (S - 1);
    check(image.shape()[0] == cfg.in_channels, "model_forward: channel mismatch");
    check(H % div == 0 && W % div == 0, "model_forward: H and W must be divisible by " +
                                            std::to_string(div));

    std::vector<Var<T>> skips;
    Var<T> t = conv2d_nobias(image, w.shallow, 1, 1, 1, MacCat::plumbing);
    for (int64_t i = 0; i < S; ++i) {
        const int64_t cw = cfg.enc_width(i);
        t = stage_forward(t, w.enc[size_t(i)], cfg, cw, cw, cfg.enc_heads[size_t(i)]);
        skips.push_back(t);
        if (i + 1 < S)
            t = pixel_unshuffle(pointwise(t, w.down[size_t(i)], MacCat::plumbing), 2);
    }
    for (int64_t j = 0; j < S - 1; ++j) {
        t = pixel_shuffle(pointwise(t, w.up[size_t(j)], MacCat::plumbing), 2);
        t = concat0<T>({t, skips[size_t(S - 2 - j)]});
        if (j != S - 2)
            t = pointwise(t, w.skip_reduce[size_t(j)], MacCat::plumbing);
        const int64_t cw = cfg.dec_width(j);
        t = stage_forward(t, w.dec[size_t(j)], cfg, cw, cw, cfg.dec_heads[size_t(j)]);
    }
    t = stage_forward(t, w.refine, cfg, 2 * cfg.base_channels, 2 * cfg.base_channels,
                      cfg.refine_heads);
    auto res = conv2d_nobias(t, w.final_conv, 1, 1, 1, MacCat::plumbing);
    return add(image, res);
}

} // namespace tformer
