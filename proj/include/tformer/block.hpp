#pragma once

// Transformer block built around the linear Taylor attention:
//   X^ = X + Concat_h(H_h (.) G_h) W_p,   H_h = TaylorAttn(Q W_h^Q, K W_h^K, V W_h^V)
// with the gate G produced from the concatenated normalized Q/K of each head
// by a small per-head convolution plus sigmoid. A gated-dconv feedforward with
// its own pre-norm and residual completes the usual attention/FFN pair.

#include "tformer/attention.hpp"
#include "tformer/conv.hpp"
#include "tformer/rng.hpp"

namespace tformer {

struct AttentionConfig {
    int64_t channels = 16; // D
    int64_t heads = 1;
    int64_t qkv_kernel = 3;                       // depthwise context kernel
    std::vector<int64_t> msar_kernels = {3, 5, 7}; // cycled across heads
    double norm_radius = 0.5;
    bool gate_enabled = true; // false: identity gate (ablation hook)

    int64_t head_dim() const { return channels / heads; }
    int64_t msar_kernel(int64_t h) const {
        return msar_kernels[static_cast<size_t>(h % static_cast<int64_t>(msar_kernels.size()))];
    }
    void validate() const {
        check(channels >= 1 && heads >= 1 && channels % heads == 0,
              "AttentionConfig: heads must divide channels");
        check(qkv_kernel % 2 == 1, "AttentionConfig: qkv_kernel must be odd");
        for (int64_t k : msar_kernels) check(k % 2 == 1, "AttentionConfig: msar kernels must be odd");
    }
};

template <class E>
struct TmsaWeights {
    E ln_w;                        // [D]
    E qkv_pw;                      // [3D, D, 1, 1]
    E qkv_dw;                      // [3D, 1, k, k]
    std::vector<E> wq, wk, wv;     // per head [d, D]
    std::vector<E> msar_w, msar_b; // per head [1, 2d, kh, kh], [1]
    E out_pw;                      // [D, D, 1, 1]

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".ln_w", ln_w);
        f(p + ".qkv_pw", qkv_pw);
        f(p + ".qkv_dw", qkv_dw);
        for (size_t h = 0; h < wq.size(); ++h) {
            f(p + ".wq." + std::to_string(h), wq[h]);
            f(p + ".wk." + std::to_string(h), wk[h]);
            f(p + ".wv." + std::to_string(h), wv[h]);
        }
        for (size_t h = 0; h < msar_w.size(); ++h) {
            f(p + ".msar_w." + std::to_string(h), msar_w[h]);
            f(p + ".msar_b." + std::to_string(h), msar_b[h]);
        }
        f(p + ".out_pw", out_pw);
    }
    // Same enumeration order as visit(): positional bindings rely on it.
    template <class F>
    auto map(F&& f) const {
        TmsaWeights<decltype(f(ln_w))> r;
        r.ln_w = f(ln_w);
        r.qkv_pw = f(qkv_pw);
        r.qkv_dw = f(qkv_dw);
        for (size_t h = 0; h < wq.size(); ++h) {
            r.wq.push_back(f(wq[h]));
            r.wk.push_back(f(wk[h]));
            r.wv.push_back(f(wv[h]));
        }
        for (size_t h = 0; h < msar_w.size(); ++h) {
            r.msar_w.push_back(f(msar_w[h]));
            r.msar_b.push_back(f(msar_b[h]));
        }
        r.out_pw = f(out_pw);
        return r;
    }
};

template <class E>
struct FfnWeights {
    E ln_w;    // [D]
    E expand;  // [2D, D, 1, 1]
    E dw;      // [2D, 1, 3, 3]
    E project; // [D, D, 1, 1]

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".ln_w", ln_w);
        f(p + ".expand", expand);
        f(p + ".dw", dw);
        f(p + ".project", project);
    }
    template <class F>
    auto map(F&& f) const {
        FfnWeights<decltype(f(ln_w))> r;
        r.ln_w = f(ln_w);
        r.expand = f(expand);
        r.dw = f(dw);
        r.project = f(project);
        return r;
    }
};

template <class T>
TmsaWeights<Tensor<T>> init_tmsa_weights(const AttentionConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const int64_t D = cfg.channels, d = cfg.head_dim(), k = cfg.qkv_kernel;
    TmsaWeights<Tensor<T>> w;
    w.ln_w = Tensor<T>::full({D}, T(1));
    w.qkv_pw = init_uniform<T>({3 * D, D, 1, 1}, D, rng);
    w.qkv_dw = init_uniform<T>({3 * D, 1, k, k}, k * k, rng);
    for (int64_t h = 0; h < cfg.heads; ++h) {
        w.wq.push_back(init_uniform<T>({d, D}, D, rng));
        w.wk.push_back(init_uniform<T>({d, D}, D, rng));
        w.wv.push_back(init_uniform<T>({d, D}, D, rng));
        const int64_t mk = cfg.msar_kernel(h);
        w.msar_w.push_back(init_uniform<T>({1, 2 * d, mk, mk}, 2 * d * mk * mk, rng));
        w.msar_b.push_back(Tensor<T>::zeros({1}));
    }
    w.out_pw = init_uniform<T>({D, D, 1, 1}, D, rng);
    return w;
}

template <class T>
FfnWeights<Tensor<T>> init_ffn_weights(int64_t channels, std::mt19937_64& rng) {
    FfnWeights<Tensor<T>> w;
    w.ln_w = Tensor<T>::full({channels}, T(1));
    w.expand = init_uniform<T>({2 * channels, channels, 1, 1}, channels, rng);
    w.dw = init_uniform<T>({2 * channels, 1, 3, 3}, 9, rng);
    w.project = init_uniform<T>({channels, channels, 1, 1}, channels, rng);
    return w;
}

// Gate from the normalized per-head Q/K: per head, Concat(Q~,K~) -> conv
// (kernel cycling across heads) -> one channel; heads stacked, then sigmoid.
template <class T>
Var<T> msar_gate(const std::vector<Var<T>>& qn, const std::vector<Var<T>>& kn,
                 const std::vector<Var<T>>& msar_w, const std::vector<Var<T>>& msar_b, int64_t hs,
                 int64_t ws, const AttentionConfig& cfg) {
    check(qn.size() == kn.size() && qn.size() == msar_w.size(), "msar_gate: per-head list sizes disagree");
    const int64_t d = cfg.head_dim();
    std::vector<Var<T>> gs;
    for (size_t h = 0; h < qn.size(); ++h) {
        auto t = concat0<T>({reshape(qn[h], {d, hs, ws}), reshape(kn[h], {d, hs, ws})});
        const int64_t k = cfg.msar_kernel(static_cast<int64_t>(h));
        gs.push_back(conv2d(t, msar_w[h], msar_b[h], 1, (k - 1) / 2, 1, MacCat::msar_conv));
    }
    return sigmoid(concat0(gs), MacCat::activation); // [heads, hs, ws]
}

template <class T>
Var<T> tmsa_block(const Var<T>& x, const TmsaWeights<Var<T>>& w, const AttentionConfig& cfg) {
    cfg.validate();
    check(x.value.rank() == 3 && x.shape()[0] == cfg.channels,
          "tmsa_block: input " + shape_str(x.shape()) + " vs channels " +
              std::to_string(cfg.channels));
    const int64_t D = cfg.channels, d = cfg.head_dim();
    const int64_t hs = x.shape()[1], ws = x.shape()[2], n = hs * ws;
    const T radius = static_cast<T>(cfg.norm_radius);

    auto xn = layer_norm_channels(x, w.ln_w);
    auto qkv = pointwise(xn, w.qkv_pw, MacCat::qkv_pointwise);
    qkv = conv2d_nobias(qkv, w.qkv_dw, 1, (cfg.qkv_kernel - 1) / 2, 3 * D, MacCat::qkv_depthwise);
    auto q = reshape(slice0(qkv, 0, D), {D, n});
    auto k = reshape(slice0(qkv, D, 2 * D), {D, n});
    auto v = reshape(slice0(qkv, 2 * D, 3 * D), {D, n});

    std::vector<Var<T>> qn, kn, outs;
    for (int64_t h = 0; h < cfg.heads; ++h) {
        auto qh = matmul(w.wq[static_cast<size_t>(h)], q, MacCat::head_projection);
        auto kh = matmul(w.wk[static_cast<size_t>(h)], k, MacCat::head_projection);
        auto vh = matmul(w.wv[static_cast<size_t>(h)], v, MacCat::head_projection);
        qn.push_back(normalize_tokens(qh, radius));
        kn.push_back(normalize_tokens(kh, radius));
        outs.push_back(taylor_attention_linear(qn.back(), kn.back(), vh));
    }
    if (cfg.gate_enabled) {
        auto g = msar_gate(qn, kn, w.msar_w, w.msar_b, hs, ws, cfg);
        for (int64_t h = 0; h < cfg.heads; ++h)
            outs[static_cast<size_t>(h)] =
                mul(outs[static_cast<size_t>(h)], reshape(slice0(g, h, h + 1), {1, n}),
                    MacCat::gate_apply);
    }
    (void)d;
    auto cat = reshape(concat0(outs), {D, hs, ws});
    auto y = pointwise(cat, w.out_pw, MacCat::out_projection);
    return add(x, y);
}

template <class T>
Var<T> feedforward(const Var<T>& x, const FfnWeights<Var<T>>& w) {
    check(x.value.rank() == 3, "feedforward: expects [C,H,W], got " + shape_str(x.shape()));
    const int64_t D = x.shape()[0];
    auto xn = layer_norm_channels(x, w.ln_w);
    auto h = pointwise(xn, w.expand, MacCat::feedforward);
    h = conv2d_nobias(h, w.dw, 1, 1, 2 * D, MacCat::feedforward);
    auto a = slice0(h, 0, D);
    auto b = slice0(h, D, 2 * D);
    auto g = mul(hardswish(a), b, MacCat::feedforward);
    auto y = pointwise(g, w.project, MacCat::feedforward);
    return add(x, y);
}

// Analytic multiply counts matching the instrumentation exactly.
namespace attn_macs {

// Counted T-MSA entry: qkv pointwise (3 N D^2), per-head projections
// (3 N D^2), core contractions (2 N D d), denominator dots (N D), divides
// (N D), output projection (N D^2). Equals 18ND + 7ND^2 when d == 8.
inline uint64_t tmsa_counted(int64_t n, int64_t D, int64_t d) {
    return static_cast<uint64_t>(7 * n * D * D) + static_cast<uint64_t>((2 * d + 2) * n * D);
}
inline uint64_t linear_core(int64_t n, int64_t d, int64_t heads) {
    return static_cast<uint64_t>(heads) * (static_cast<uint64_t>(2 * n * d * d) +
                                           static_cast<uint64_t>(2 * n * d));
}
inline uint64_t quadratic_stream(int64_t n, int64_t d, int64_t heads, int order) {
    uint64_t per = static_cast<uint64_t>(2 * n * n * d) + static_cast<uint64_t>(n * d);
    if (order == 2) per += static_cast<uint64_t>(2 * n * n);
    return static_cast<uint64_t>(heads) * per;
}
inline uint64_t softmax_stream(int64_t n, int64_t d, int64_t heads) {
    return static_cast<uint64_t>(heads) *
           (static_cast<uint64_t>(2 * n * n * d) + static_cast<uint64_t>(n * d));
}
inline uint64_t qkv_depthwise(int64_t n, int64_t D, int64_t k) {
    return static_cast<uint64_t>(3 * D * n * k * k);
}
inline uint64_t qk_normalize(int64_t n, int64_t D) { return static_cast<uint64_t>(4 * n * D); }
inline uint64_t msar(int64_t n, const AttentionConfig& cfg) {
    uint64_t t = 0;
    for (int64_t h = 0; h < cfg.heads; ++h) {
        int64_t k = cfg.msar_kernel(h);
        t += static_cast<uint64_t>(n * k * k * 2 * cfg.head_dim());
    }
    return t;
}
inline uint64_t gate_apply(int64_t n, int64_t D) { return static_cast<uint64_t>(n * D); }
inline uint64_t ffn(int64_t n, int64_t D) {
    // expand 2ND^2 + depthwise 18ND + gate mul ND + project ND^2
    return static_cast<uint64_t>(3 * n * D * D) + static_cast<uint64_t>(19 * n * D);
}

} // namespace attn_macs

} // namespace tformer
