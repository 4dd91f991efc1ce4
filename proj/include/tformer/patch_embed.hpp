#pragma once

// Multi-branch patch embedding: parallel stacks of deformable separable
// convolutions over the same input. Branch b applies depth_b layers (the
// first maps in->out channels, the rest out->out), so deeper branches see a
// larger receptive field. All branches keep the input resolution.

#include "tformer/dsdcn.hpp"

namespace tformer {

struct EmbedConfig {
    int64_t in_channels = 3;
    int64_t out_channels = 16;
    int64_t kernel = 3;
    std::vector<int64_t> branch_depths = {1, 2};
    double offset_clamp = 3.0;
};

template <class E>
struct MultiScaleEmbedWeights {
    std::vector<std::vector<DsdcnWeights<E>>> branches;

    template <class F>
    void visit(const std::string& p, F&& f) {
        for (size_t b = 0; b < branches.size(); ++b)
            for (size_t l = 0; l < branches[b].size(); ++l)
                branches[b][l].visit(p + ".b" + std::to_string(b) + ".l" + std::to_string(l), f);
    }
    template <class F>
    auto map(F&& f) const {
        MultiScaleEmbedWeights<decltype(f(branches[0][0].off_dw))> r;
        for (const auto& br : branches) {
            r.branches.emplace_back();
            for (const auto& l : br) r.branches.back().push_back(l.map(f));
        }
        return r;
    }
};

template <class T>
MultiScaleEmbedWeights<Tensor<T>> init_embed_weights(const EmbedConfig& cfg,
                                                     std::mt19937_64& rng) {
    check(!cfg.branch_depths.empty(), "EmbedConfig: need at least one branch");
    MultiScaleEmbedWeights<Tensor<T>> w;
    for (int64_t depth : cfg.branch_depths) {
        check(depth >= 1, "EmbedConfig: branch depth must be >= 1");
        w.branches.emplace_back();
        for (int64_t l = 0; l < depth; ++l) {
            const int64_t cin = (l == 0) ? cfg.in_channels : cfg.out_channels;
            w.branches.back().push_back(
                init_dsdcn_weights<T>(cin, cfg.out_channels, cfg.kernel, rng));
        }
    }
    return w;
}

// One output per branch, each [out_channels, H, W].
template <class T>
std::vector<Var<T>> multi_scale_embed(const Var<T>& x, const MultiScaleEmbedWeights<Var<T>>& w,
                                      const EmbedConfig& cfg,
                                      std::vector<Var<T>>* offsets_out = nullptr) {
    std::vector<Var<T>> outs;
    for (const auto& branch : w.branches) {
        Var<T> h = x;
        for (const auto& layer : branch) {
            Var<T> off;
            h = dsdcn_embed(h, layer, cfg.kernel, cfg.offset_clamp, offsets_out ? &off : nullptr);
            if (offsets_out) offsets_out->push_back(off);
        }
        outs.push_back(h);
    }
    return outs;
}

inline uint64_t embed_param_count(const EmbedConfig& cfg) {
    uint64_t t = 0;
    for (int64_t depth : cfg.branch_depths)
        for (int64_t l = 0; l < depth; ++l)
            t += dsdcn_param_count(l == 0 ? cfg.in_channels : cfg.out_channels, cfg.out_channels,
                                   cfg.kernel);
    return t;
}
inline uint64_t embed_mult_count(const EmbedConfig& cfg, int64_t h, int64_t w) {
    uint64_t t = 0;
    for (int64_t depth : cfg.branch_depths)
        for (int64_t l = 0; l < depth; ++l)
            t += dsdcn_mult_count(l == 0 ? cfg.in_channels : cfg.out_channels, cfg.out_channels,
                                  cfg.kernel, h, w);
    return t;
}

} // namespace tformer
