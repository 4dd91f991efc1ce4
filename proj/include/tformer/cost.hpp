#pragma once

// Closed-form multiply counts for every component, mirroring the runtime
// instrumentation category by category. The whole-model breakdown walks the
// same topology as model_forward, so tests can assert analytic == measured
// for each category, not just in total.

#include <array>

#include "tformer/backbone.hpp"

namespace tformer {

// Quadratic-cost references at width D over hw tokens.
inline uint64_t msa_mult_count(int64_t hw, int64_t D) {
    return static_cast<uint64_t>(4 * hw * D * D) +
           2 * static_cast<uint64_t>(hw) * static_cast<uint64_t>(hw) * static_cast<uint64_t>(D);
}
// Counted linear-attention cost; equals 18*hw*D + 7*hw*D^2 at head width 8.
inline uint64_t tmsa_mult_count(int64_t hw, int64_t D, int64_t head_dim = 8) {
    return attn_macs::tmsa_counted(hw, D, head_dim);
}
// Smallest token count where the quadratic reference exceeds the linear cost
// at head width 8: MSA - TMSA = hw*D*(2*hw - 3*D - 18) > 0 <=> 2*hw > 3*D+18.
inline int64_t attention_crossover_tokens(int64_t D) { return (3 * D + 18) / 2 + 1; }

// Dense deformable baseline: per-pixel offsets and kernels predicted by a
// full KxK conv over all M channels, then an MxN KxK gathering conv.
inline uint64_t dense_deform_mult_count(int64_t m, int64_t n, int64_t k, int64_t hw) {
    const uint64_t k2 = static_cast<uint64_t>(k * k);
    return static_cast<uint64_t>(hw) *
           (2 * static_cast<uint64_t>(m) * k2 * k2 + static_cast<uint64_t>(m * n) * k2 +
            4 * static_cast<uint64_t>(m) * k2);
}
inline uint64_t dense_deform_param_count(int64_t m, int64_t n, int64_t k) {
    const uint64_t k2 = static_cast<uint64_t>(k * k);
    return 2 * static_cast<uint64_t>(m) * k2 * k2 + static_cast<uint64_t>(m * n) * k2;
}

struct CostBreakdown {
    std::array<uint64_t, static_cast<size_t>(MacCat::kCount)> by_cat{};

    uint64_t& at(MacCat c) { return by_cat[static_cast<size_t>(c)]; }
    uint64_t get(MacCat c) const { return by_cat[static_cast<size_t>(c)]; }
    uint64_t total() const {
        uint64_t t = 0;
        for (auto v : by_cat) t += v;
        return t;
    }
    CostBreakdown& operator+=(const CostBreakdown& o) {
        for (size_t i = 0; i < by_cat.size(); ++i) by_cat[i] += o.by_cat[i];
        return *this;
    }
};

inline CostBreakdown dsdcn_cost(int64_t m, int64_t n, int64_t k, int64_t hw) {
    CostBreakdown c;
    const uint64_t mk2hw = static_cast<uint64_t>(m * k * k * hw);
    c.at(MacCat::embed_offset) = 3 * mk2hw;
    c.at(MacCat::embed_deform) = mk2hw;
    c.at(MacCat::embed_bilinear) = 4 * mk2hw;
    c.at(MacCat::embed_pointwise) = static_cast<uint64_t>(m * n * hw);
    c.at(MacCat::activation) = static_cast<uint64_t>(2 * n * hw); // hardswish
    return c;
}

inline CostBreakdown embed_cost(const EmbedConfig& e, int64_t hw) {
    CostBreakdown c;
    for (int64_t depth : e.branch_depths)
        for (int64_t l = 0; l < depth; ++l)
            c += dsdcn_cost(l == 0 ? e.in_channels : e.out_channels, e.out_channels, e.kernel, hw);
    return c;
}

inline CostBreakdown tmsa_cost(const AttentionConfig& a, int64_t n) {
    CostBreakdown c;
    const int64_t D = a.channels, d = a.head_dim();
    c.at(MacCat::norm) = static_cast<uint64_t>(2 * n * D);
    c.at(MacCat::qkv_pointwise) = static_cast<uint64_t>(3 * n * D * D);
    c.at(MacCat::qkv_depthwise) = static_cast<uint64_t>(3 * n * D * a.qkv_kernel * a.qkv_kernel);
    c.at(MacCat::head_projection) = static_cast<uint64_t>(3 * n * D * D);
    c.at(MacCat::qk_normalize) = static_cast<uint64_t>(4 * n * D);
    c.at(MacCat::attn_core) = static_cast<uint64_t>(2 * n * D * d);
    c.at(MacCat::attn_denominator) = static_cast<uint64_t>(n * D);
    c.at(MacCat::attn_divide) = static_cast<uint64_t>(n * D);
    if (a.gate_enabled) {
        c.at(MacCat::msar_conv) = attn_macs::msar(n, a);
        c.at(MacCat::activation) = static_cast<uint64_t>(a.heads * n); // sigmoid
        c.at(MacCat::gate_apply) = static_cast<uint64_t>(n * D);
    }
    c.at(MacCat::out_projection) = static_cast<uint64_t>(n * D * D);
    return c;
}

inline CostBreakdown ffn_cost(int64_t D, int64_t n) {
    CostBreakdown c;
    c.at(MacCat::norm) = static_cast<uint64_t>(2 * n * D);
    c.at(MacCat::feedforward) = static_cast<uint64_t>(3 * n * D * D + 19 * n * D);
    c.at(MacCat::activation) = static_cast<uint64_t>(2 * n * D); // hardswish
    return c;
}

inline CostBreakdown skff_cost(int64_t channels, int64_t n, int64_t branches) {
    CostBreakdown c;
    const int64_t cr = skff_bottleneck(channels);
    c.at(MacCat::skff) = static_cast<uint64_t>(channels)            // global-average scale
                         + static_cast<uint64_t>(cr * channels)     // squeeze
                         + static_cast<uint64_t>(branches * channels * cr) // per-branch logits
                         + static_cast<uint64_t>(branches * channels)      // softmax divide
                         + static_cast<uint64_t>(branches * channels * n); // recombination
    return c;
}

inline CostBreakdown stage_cost(const NetworkConfig& cfg, int64_t in_c, int64_t width,
                                int64_t heads, int64_t blocks, int64_t hw) {
    CostBreakdown c = embed_cost(stage_embed_config(cfg, in_c, width), hw);
    const auto acfg = stage_attn_config(cfg, width, heads);
    const int64_t branches = static_cast<int64_t>(cfg.branch_depths.size());
    for (int64_t b = 0; b < branches; ++b)
        for (int64_t k = 0; k < blocks; ++k) {
            c += tmsa_cost(acfg, hw);
            c += ffn_cost(width, hw);
        }
    c += skff_cost(width, hw, branches);
    return c;
}

inline CostBreakdown model_cost(const NetworkConfig& cfg, int64_t H, int64_t W) {
    cfg.validate();
    CostBreakdown c;
    c.at(MacCat::plumbing) +=
        static_cast<uint64_t>(cfg.base_channels * cfg.in_channels * 9 * H * W); // shallow conv
    const int64_t S = cfg.scales();
    for (int64_t i = 0; i < S; ++i) {
        const int64_t hw = (H >> i) * (W >> i);
        const int64_t cw = cfg.enc_width(i);
        c += stage_cost(cfg, cw, cw, cfg.enc_heads[size_t(i)], cfg.enc_blocks[size_t(i)], hw);
        if (i + 1 < S)
            c.at(MacCat::plumbing) += static_cast<uint64_t>((cw / 2) * cw * hw);
    }
    for (int64_t j = 0; j < S - 1; ++j) {
        const int64_t cur = (j == 0) ? cfg.enc_width(S - 1) : cfg.dec_width(j - 1);
        const int64_t hw_in = (H >> (S - 1 - j)) * (W >> (S - 1 - j));
        const int64_t hw_out = (H >> (S - 2 - j)) * (W >> (S - 2 - j));
        c.at(MacCat::plumbing) += static_cast<uint64_t>(2 * cur * cur * hw_in); // upsample proj
        if (j != S - 2)
            c.at(MacCat::plumbing) += static_cast<uint64_t>((cur / 2) * cur * hw_out); // skip merge
        const int64_t cw = cfg.dec_width(j);
        c += stage_cost(cfg, cw, cw, cfg.dec_heads[size_t(j)], cfg.dec_blocks[size_t(j)], hw_out);
    }
    c += stage_cost(cfg, 2 * cfg.base_channels, 2 * cfg.base_channels, cfg.refine_heads,
                    cfg.refine_blocks, H * W);
    c.at(MacCat::plumbing) +=
        static_cast<uint64_t>(cfg.out_channels * 2 * cfg.base_channels * 9 * H * W);
    return c;
}

inline uint64_t model_param_count(const NetworkConfig& cfg) {
    // Mirrors init_model's tensor shapes.
    cfg.validate();
    uint64_t p = 0;
    auto stage = [&](int64_t in_c, int64_t width, int64_t heads, int64_t blocks) {
        p += embed_param_count(stage_embed_config(cfg, in_c, width));
        const int64_t d = width / heads, qk = cfg.qkv_kernel;
        for (size_t b = 0; b < cfg.branch_depths.size(); ++b)
            for (int64_t k = 0; k < blocks; ++k) {
                p += uint64_t(width);                    // attention pre-norm
                p += uint64_t(3 * width * width);        // qkv pointwise
                p += uint64_t(3 * width * qk * qk);      // qkv depthwise
                p += uint64_t(heads * 3 * d * width);    // per-head projections
                for (int64_t h = 0; h < heads; ++h) {    // gate convs
                    AttentionConfig a;
                    a.msar_kernels = cfg.msar_kernels;
                    const int64_t mk = a.msar_kernel(h);
                    p += uint64_t(2 * d * mk * mk + 1);
                }
                p += uint64_t(width * width);            // output projection
                p += uint64_t(width);                    // ffn pre-norm
                p += uint64_t(2 * width * width + 18 * width + width * width); // ffn convs
            }
        const int64_t cr = skff_bottleneck(width);
        p += uint64_t(cr * width + int64_t(cfg.branch_depths.size()) * width * cr);
    };
    p += uint64_t(cfg.base_channels * cfg.in_channels * 9); // shallow conv
    const int64_t S = cfg.scales();
    for (int64_t i = 0; i < S; ++i) {
        const int64_t cw = cfg.enc_width(i);
        stage(cw, cw, cfg.enc_heads[size_t(i)], cfg.enc_blocks[size_t(i)]);
        if (i + 1 < S) p += uint64_t((cw / 2) * cw);
    }
    for (int64_t j = 0; j < S - 1; ++j) {
        const int64_t cur = (j == 0) ? cfg.enc_width(S - 1) : cfg.dec_width(j - 1);
        p += uint64_t(2 * cur * cur);
        if (j != S - 2) p += uint64_t((cur / 2) * cur);
        const int64_t cw = cfg.dec_width(j);
        stage(cw, cw, cfg.dec_heads[size_t(j)], cfg.dec_blocks[size_t(j)]);
    }
    stage(2 * cfg.base_channels, 2 * cfg.base_channels, cfg.refine_heads, cfg.refine_blocks);
    p += uint64_t(cfg.out_channels * 2 * cfg.base_channels * 9);
    return p;
}

} // namespace tformer
