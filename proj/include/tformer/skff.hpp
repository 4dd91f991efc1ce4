#pragma once

// Selective feature fusion across parallel branches: sum the branch maps,
// squeeze spatially, pass through a small bottleneck, emit one logit vector
// per branch, softmax across branches per channel, and recombine the branch
// maps with those attention weights. With a single branch the softmax is
// exactly one and the fusion is the identity. Bias-free.

#include "tformer/ops.hpp"
#include "tformer/rng.hpp"

namespace tformer {

template <class E>
struct SkffWeights {
    E squeeze;          // [Cr, C]
    std::vector<E> out; // per branch [C, Cr]

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".squeeze", squeeze);
        for (size_t b = 0; b < out.size(); ++b) f(p + ".out." + std::to_string(b), out[b]);
    }
    template <class F>
    auto map(F&& f) const {
        SkffWeights<decltype(f(squeeze))> r;
        r.squeeze = f(squeeze);
        for (const auto& t : out) r.out.push_back(f(t));
        return r;
    }
};

inline int64_t skff_bottleneck(int64_t channels) { return std::max<int64_t>(channels / 8, 4); }

template <class T>
SkffWeights<Tensor<T>> init_skff_weights(int64_t channels, int64_t branches,
                                         std::mt19937_64& rng) {
    const int64_t cr = skff_bottleneck(channels);
    SkffWeights<Tensor<T>> w;
    w.squeeze = init_uniform<T>({cr, channels}, channels, rng);
    for (int64_t b = 0; b < branches; ++b) w.out.push_back(init_uniform<T>({channels, cr}, cr, rng));
    return w;
}

template <class T>
Var<T> skff_fuse(const std::vector<Var<T>>& xs, const SkffWeights<Var<T>>& w) {
    check(!xs.empty() && xs.size() == w.out.size(), "skff_fuse: branch count mismatch");
    const int64_t c = xs[0].shape()[0], hs = xs[0].shape()[1], ws = xs[0].shape()[2];
    const int64_t n = hs * ws, nb = static_cast<int64_t>(xs.size());
    for (const auto& x : xs) check_shape_eq(x.shape(), xs[0].shape(), "skff_fuse branches");

    auto total = xs[0];
    for (size_t b = 1; b < xs.size(); ++b) total = add(total, xs[b]);
    auto gap = mul_scalar(sum_rows(reshape(total, {c, n})), T(1) / T(n), MacCat::skff); // [C]
    auto z = leaky_relu(matmul(w.squeeze, reshape(gap, {c, 1}), MacCat::skff), T(0.01));
    std::vector<Var<T>> logits;
    for (size_t b = 0; b < xs.size(); ++b)
        logits.push_back(reshape(matmul(w.out[b], z, MacCat::skff), {1, c}));
    auto e = exp(concat0(logits)); // [B, C]
    auto den = sum_rows(transpose2d(e));
    auto att = div(e, reshape(den, {1, c}), MacCat::skff); // [B, C], softmax over branches
    Var<T> fused;
    for (int64_t b = 0; b < nb; ++b) {
        auto ab = reshape(slice0(att, b, b + 1), {c, 1, 1});
        auto term = mul(xs[static_cast<size_t>(b)], ab, MacCat::skff);
        fused = (b == 0) ? term : add(fused, term);
    }
    return fused;
}

} // namespace tformer
