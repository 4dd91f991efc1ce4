#pragma once

// Separable deformable convolution for patch embedding. A depthwise+pointwise
// predictor produces one (dy,dx) offset pair per kernel tap, shared by every
// input channel at that pixel; a depthwise deformable pass samples each tap
// bilinearly and modulates it with a per-channel tap weight; a pointwise mix
// maps M input channels to N embedding channels. Bias-free throughout, so
// params = 4MK^2 + MN and multiplies = (8MK^2 + MN) per pixel:
//   offset predictor 3MK^2, tap modulation MK^2, bilinear 4MK^2, mix MN.
// Bilinear sampling always spends 4 multiplies (out-of-bounds corners read 0),
// and corner-weight formation is not counted.

#include "tformer/conv.hpp"
#include "tformer/rng.hpp"

namespace tformer {

namespace detail {

// Bilinear sampling geometry for one kernel tap at every pixel: the four
// corner gather indices (clamped in range), the combined corner weights
// (zeroed when the corner falls outside), and — for the offset gradient —
// the raw fractional coordinates plus per-corner in-bounds masks. Shared by
// all channels, so it is built once per tap instead of once per
// (channel, tap), and the forward pass hands it to the backward pass.
template <class T>
struct TapGeometry {
    std::vector<int32_t> i00, i01, i10, i11;
    std::vector<T> w00, w01, w10, w11;
    std::vector<T> fy, fx;
    std::vector<T> m00, m01, m10, m11;

    void resize(int64_t hw) {
        const size_t n = static_cast<size_t>(hw);
        i00.resize(n), i01.resize(n), i10.resize(n), i11.resize(n);
        w00.resize(n), w01.resize(n), w10.resize(n), w11.resize(n);
        fy.resize(n), fx.resize(n);
        m00.resize(n), m01.resize(n), m10.resize(n), m11.resize(n);
    }
};

// floor() without libm; exact for the bounded sample coordinates used here.
template <class T>
inline int64_t floor_i64(T v) {
    const int64_t i = static_cast<int64_t>(v);
    return (T(i) > v) ? i - 1 : i;
}

template <class T>
void build_tap_geometry(const T* off, int64_t t, int64_t k, int64_t h, int64_t w,
                        TapGeometry<T>& g) {
    const int64_t c = (k - 1) / 2, hw = h * w;
    const T* offy = off + (2 * t) * hw;
    const T* offx = off + (2 * t + 1) * hw;
    const int64_t ty = t / k - c, tx = t % k - c;
    for (int64_t oy = 0; oy < h; ++oy)
        for (int64_t ox = 0; ox < w; ++ox) {
            const int64_t p = oy * w + ox;
            const T iy = T(oy + ty) + offy[p];
            const T ix = T(ox + tx) + offx[p];
            const int64_t y0 = floor_i64(iy), x0 = floor_i64(ix);
            const T fy = iy - T(y0), fx = ix - T(x0);
            const bool y0i = y0 >= 0 && y0 < h, y1i = y0 + 1 >= 0 && y0 + 1 < h;
            const bool x0i = x0 >= 0 && x0 < w, x1i = x0 + 1 >= 0 && x0 + 1 < w;
            auto idx = [&](int64_t yy, int64_t xx) {
                yy = yy < 0 ? 0 : (yy >= h ? h - 1 : yy);
                xx = xx < 0 ? 0 : (xx >= w ? w - 1 : xx);
                return static_cast<int32_t>(yy * w + xx);
            };
            g.i00[p] = idx(y0, x0);
            g.i01[p] = idx(y0, x0 + 1);
            g.i10[p] = idx(y0 + 1, x0);
            g.i11[p] = idx(y0 + 1, x0 + 1);
            g.w00[p] = (y0i && x0i) ? (T(1) - fy) * (T(1) - fx) : T(0);
            g.w01[p] = (y0i && x1i) ? (T(1) - fy) * fx : T(0);
            g.w10[p] = (y1i && x0i) ? fy * (T(1) - fx) : T(0);
            g.w11[p] = (y1i && x1i) ? fy * fx : T(0);
            g.fy[p] = fy;
            g.fx[p] = fx;
            g.m00[p] = (y0i && x0i) ? T(1) : T(0);
            g.m01[p] = (y0i && x1i) ? T(1) : T(0);
            g.m10[p] = (y1i && x0i) ? T(1) : T(0);
            g.m11[p] = (y1i && x1i) ? T(1) : T(0);
        }
}

template <class T>
std::vector<TapGeometry<T>> build_deform_geometry(const T* off, int64_t k, int64_t h, int64_t w) {
    const int64_t kk = k * k;
    std::vector<TapGeometry<T>> geo(static_cast<size_t>(kk));
    for (int64_t t = 0; t < kk; ++t) {
        geo[static_cast<size_t>(t)].resize(h * w);
        build_tap_geometry(off, t, k, h, w, geo[static_cast<size_t>(t)]);
    }
    return geo;
}

// Forward. When `samples` is non-null it receives the raw bilinear sample of
// every (channel, tap, pixel) — layout [m][k*k][h*w] — for reuse by the
// backward pass.
template <class T>
void deform_depthwise_fwd(const T* x, const T* wt, const std::vector<TapGeometry<T>>& geo, T* out,
                          T* samples, int64_t m, int64_t h, int64_t w, int64_t k) {
    const int64_t kk = k * k, hw = h * w;
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < m; ++ch) {
        const T* xp = x + ch * hw;
        T* op = out + ch * hw;
        for (int64_t p = 0; p < hw; ++p) op[p] = T(0);
        for (int64_t t = 0; t < kk; ++t) {
            const auto& g = geo[static_cast<size_t>(t)];
            const T wc = wt[ch * kk + t];
            if (samples) {
                T* sp = samples + (ch * kk + t) * hw;
                for (int64_t p = 0; p < hw; ++p) {
                    const T s = g.w00[p] * xp[g.i00[p]] + g.w01[p] * xp[g.i01[p]] +
                                g.w10[p] * xp[g.i10[p]] + g.w11[p] * xp[g.i11[p]];
                    sp[p] = s;
                    op[p] += wc * s;
                }
            } else {
                for (int64_t p = 0; p < hw; ++p) {
                    const T s = g.w00[p] * xp[g.i00[p]] + g.w01[p] * xp[g.i01[p]] +
                                g.w10[p] * xp[g.i10[p]] + g.w11[p] * xp[g.i11[p]];
                    op[p] += wc * s;
                }
            }
        }
    }
}

template <class T>
void deform_depthwise_bwd(const T* x, const T* samples, const T* wt, const T* g,
                          const std::vector<TapGeometry<T>>& geo, T* dx_, T* doff, T* dwt,
                          int64_t m, int64_t h, int64_t w, int64_t k) {
    const int64_t kk = k * k, hw = h * w;
    // Pass 1: input and tap-weight gradients; each thread owns one channel.
    // Tap weights reduce against the stored forward samples; the input
    // gradient scatters through the clamped indices, where out-of-image
    // corner weights are zero, so those adds are exact zeros.
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < m; ++ch) {
        const T* gp = g + ch * hw;
        T* dxp = dx_ + ch * hw;
        for (int64_t t = 0; t < kk; ++t) {
            const auto& ge = geo[static_cast<size_t>(t)];
            const T wc = wt[ch * kk + t];
            dwt[ch * kk + t] += dot8(gp, samples + (ch * kk + t) * hw, hw);
            for (int64_t p = 0; p < hw; ++p) {
                const T coef = gp[p] * wc;
                dxp[ge.i00[p]] += coef * ge.w00[p];
                dxp[ge.i01[p]] += coef * ge.w01[p];
                dxp[ge.i10[p]] += coef * ge.w10[p];
                dxp[ge.i11[p]] += coef * ge.w11[p];
            }
        }
    }
    // Pass 2: offset gradients. Each thread owns whole taps (disjoint offset
    // planes), and every pixel sums its channels in ascending order, so the
    // result is identical at any thread count. Corner differences need the
    // unclamped masks, hence the mask/fraction arrays instead of the combined
    // weights.
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < kk; ++t) {
        const auto& ge = geo[static_cast<size_t>(t)];
        T* dyp = doff + (2 * t) * hw;
        T* dxp2 = doff + (2 * t + 1) * hw;
        for (int64_t ch = 0; ch < m; ++ch) {
            const T wc = wt[ch * kk + t];
            const T* gp = g + ch * hw;
            const T* xp = x + ch * hw;
            for (int64_t p = 0; p < hw; ++p) {
                const T v00 = ge.m00[p] * xp[ge.i00[p]];
                const T v01 = ge.m01[p] * xp[ge.i01[p]];
                const T v10 = ge.m10[p] * xp[ge.i10[p]];
                const T v11 = ge.m11[p] * xp[ge.i11[p]];
                const T coef = gp[p] * wc;
                const T fy = ge.fy[p], fx = ge.fx[p];
                dyp[p] += coef * ((v10 - v00) * (T(1) - fx) + (v11 - v01) * fx);
                dxp2[p] += coef * ((v01 - v00) * (T(1) - fy) + (v11 - v10) * fy);
            }
        }
    }
}

} // namespace detail

// x [M,H,W], offsets [2K^2,H,W] (pairs dy,dx per tap), weight [M,K^2].
// Output [M,H,W]. With all offsets zero this equals the rigid depthwise
// convolution with the same tap weights, bit for bit.
template <class T>
Var<T> deform_depthwise(const Var<T>& x, const Var<T>& offsets, const Var<T>& weight, int64_t k) {
    check(k % 2 == 1, "deform_depthwise: kernel must be odd");
    check(x.value.rank() == 3, "deform_depthwise: input must be [M,H,W]");
    const int64_t m = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    check_shape_eq(offsets.shape(), {2 * k * k, h, w}, "deform_depthwise offsets");
    check_shape_eq(weight.shape(), {m, k * k}, "deform_depthwise weight");

    Tape<T>* tape = x.tracked() ? x.tape
                    : offsets.tracked() ? offsets.tape
                    : weight.tracked() ? weight.tape
                                       : nullptr;
    auto geo = std::make_shared<std::vector<detail::TapGeometry<T>>>(
        detail::build_deform_geometry(offsets.value.data(), k, h, w));
    auto samples = std::make_shared<std::vector<T>>();
    if (tape) samples->resize(static_cast<size_t>(m * k * k * h * w));
    std::vector<T> outv(static_cast<size_t>(m * h * w));
    detail::deform_depthwise_fwd(x.value.data(), weight.value.data(), *geo, outv.data(),
                                 tape ? samples->data() : nullptr, m, h, w, k);
    Tensor<T> out(Shape{m, h, w}, std::move(outv));
    count_macs(MacCat::embed_deform, static_cast<uint64_t>(m * k * k * h * w));
    count_macs(MacCat::embed_bilinear, static_cast<uint64_t>(4 * m * k * k * h * w));

    if (!tape) return Var<T>(std::move(out));
    auto xv = x.value, wv = weight.value;
    int xi = x.id, oi = offsets.id, wi = weight.id;
    return tape->node(std::move(out), [=](const std::vector<T>& g, Tape<T>& t) {
        std::vector<T> dx(static_cast<size_t>(m * h * w), T(0));
        std::vector<T> doff(static_cast<size_t>(2 * k * k * h * w), T(0));
        std::vector<T> dw(static_cast<size_t>(m * k * k), T(0));
        detail::deform_depthwise_bwd(xv.data(), samples->data(), wv.data(), g.data(), *geo,
                                     dx.data(), doff.data(), dw.data(), m, h, w, k);
        t.add_grad(xi, std::move(dx));
        t.add_grad(oi, std::move(doff));
        t.add_grad(wi, std::move(dw));
    });
}

template <class E>
struct DsdcnWeights {
    E off_dw; // [M,1,K,K]
    E off_pw; // [2K^2,M,1,1], zero-initialized so training starts rigid
    E deform; // [M,K^2]
    E mix;    // [N,M,1,1]

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".off_dw", off_dw);
        f(p + ".off_pw", off_pw);
        f(p + ".deform", deform);
        f(p + ".mix", mix);
    }
    template <class F>
    auto map(F&& f) const {
        DsdcnWeights<decltype(f(off_dw))> r;
        r.off_dw = f(off_dw);
        r.off_pw = f(off_pw);
        r.deform = f(deform);
        r.mix = f(mix);
        return r;
    }
};

template <class T>
DsdcnWeights<Tensor<T>> init_dsdcn_weights(int64_t m, int64_t n, int64_t k, std::mt19937_64& rng) {
    DsdcnWeights<Tensor<T>> w;
    w.off_dw = init_uniform<T>({m, 1, k, k}, k * k, rng);
    w.off_pw = Tensor<T>::zeros({2 * k * k, m, 1, 1});
    w.deform = init_uniform<T>({m, k * k}, k * k, rng);
    w.mix = init_uniform<T>({n, m, 1, 1}, m, rng);
    return w;
}

inline uint64_t dsdcn_param_count(int64_t m, int64_t n, int64_t k) {
    return static_cast<uint64_t>(4 * m * k * k + m * n);
}
inline uint64_t dsdcn_mult_count(int64_t m, int64_t n, int64_t k, int64_t h, int64_t w) {
    return static_cast<uint64_t>(h * w) * static_cast<uint64_t>(8 * m * k * k + m * n);
}

// Full embedding layer: predict offsets, clamp them, deform, mix, hardswish.
// Offsets are clamped to +-offset_clamp pixels; *offsets_out (if given)
// receives the clamped offset field for inspection.
template <class T>
Var<T> dsdcn_embed(const Var<T>& x, const DsdcnWeights<Var<T>>& w, int64_t k,
                   double offset_clamp = 3.0, Var<T>* offsets_out = nullptr) {
    const int64_t m = x.shape()[0];
    auto o = conv2d_nobias(x, w.off_dw, 1, (k - 1) / 2, m, MacCat::embed_offset);
    o = pointwise(o, w.off_pw, MacCat::embed_offset);
    o = clamp(o, static_cast<T>(-offset_clamp), static_cast<T>(offset_clamp));
    if (offsets_out) *offsets_out = o;
    auto d = deform_depthwise(x, o, w.deform, k);
    auto y = pointwise(d, w.mix, MacCat::embed_pointwise);
    return hardswish(y, MacCat::activation);
}

} // namespace tformer
