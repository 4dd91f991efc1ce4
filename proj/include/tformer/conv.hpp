#pragma once

// Grouped 2-D convolution on [C,H,W] tensors. Zero padding is materialized into
// an explicit padded buffer, so the kernel loops are branchless and execute
// exactly out_positions * (Cin/groups) * kh * kw multiplies per output channel,
// which is what gets counted. Specialized paths for 1x1 and depthwise keep the
// same per-output accumulation order as the generic path (ascending channel,
// then kernel row-major), so path selection never changes results.

#include "tformer/ops.hpp"

namespace tformer {

namespace detail {

template <class T>
std::vector<T> pad_chw(const T* x, int64_t c, int64_t h, int64_t w, int64_t p) {
    if (p == 0) return std::vector<T>(x, x + c * h * w);
    const int64_t hp = h + 2 * p, wp = w + 2 * p;
    std::vector<T> out(static_cast<size_t>(c * hp * wp), T(0));
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            std::copy(x + (ch * h + y) * w, x + (ch * h + y) * w + w,
                      out.begin() + (ch * hp + y + p) * wp + p);
    return out;
}

struct ConvDims {
    int64_t cin, h, w, cout, kh, kw, groups, stride, pad;
    int64_t ho, wo, cin_g, cout_g;
};

template <class T>
void conv2d_fwd(const ConvDims& d, const T* xpad, const T* wt, const T* bias, T* out) {
    const int64_t hp = d.h + 2 * d.pad, wp = d.w + 2 * d.pad;
    if (d.kh == 1 && d.kw == 1 && d.stride == 1 && d.groups == 1) {
        // out[co] = bias + sum_ci w[co,ci] * x[ci]  (plane AXPY, ci ascending)
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (d.cout >= 4)
#endif
        for (int64_t co = 0; co < d.cout; ++co) {
            T* o = out + co * d.ho * d.wo;
            std::fill(o, o + d.ho * d.wo, bias ? bias[co] : T(0));
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                const T wv = wt[co * d.cin + ci];
                const T* xi = xpad + ci * hp * wp;
                for (int64_t pix = 0; pix < d.ho * d.wo; ++pix) o[pix] += wv * xi[pix];
            }
        }
        return;
    }
    if (d.groups == d.cin && d.cout == d.cin && d.stride == 1) {
        // Depthwise: per tap, row AXPY over the shifted padded plane. Each
        // output element still accumulates taps in (ky,kx) row-major order.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (d.cout >= 4)
#endif
        for (int64_t c = 0; c < d.cout; ++c) {
            T* o = out + c * d.ho * d.wo;
            std::fill(o, o + d.ho * d.wo, bias ? bias[c] : T(0));
            const T* xc = xpad + c * hp * wp;
            const T* wc = wt + c * d.kh * d.kw;
            for (int64_t ky = 0; ky < d.kh; ++ky)
                for (int64_t kx = 0; kx < d.kw; ++kx) {
                    const T wv = wc[ky * d.kw + kx];
                    for (int64_t yo = 0; yo < d.ho; ++yo) {
                        T* orow = o + yo * d.wo;
                        const T* xrow = xc + (yo + ky) * wp + kx;
                        for (int64_t xo = 0; xo < d.wo; ++xo) orow[xo] += wv * xrow[xo];
                    }
                }
        }
        return;
    }
    // Generic grouped path: per tap, row AXPY over the shifted padded plane.
    // Each output element accumulates in (ci, ky, kx) order, bias first.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (d.cout >= 4)
#endif
    for (int64_t co = 0; co < d.cout; ++co) {
        const int64_t gi = co / d.cout_g;
        T* o = out + co * d.ho * d.wo;
        std::fill(o, o + d.ho * d.wo, bias ? bias[co] : T(0));
        for (int64_t ci = 0; ci < d.cin_g; ++ci) {
            const T* xc = xpad + (gi * d.cin_g + ci) * hp * wp;
            const T* wc = wt + ((co * d.cin_g + ci) * d.kh) * d.kw;
            for (int64_t ky = 0; ky < d.kh; ++ky)
                for (int64_t kx = 0; kx < d.kw; ++kx) {
                    const T wv = wc[ky * d.kw + kx];
                    for (int64_t yo = 0; yo < d.ho; ++yo) {
                        T* orow = o + yo * d.wo;
                        const T* xr = xc + (yo * d.stride + ky) * wp + kx;
                        if (d.stride == 1) {
                            for (int64_t xo = 0; xo < d.wo; ++xo) orow[xo] += wv * xr[xo];
                        } else {
                            for (int64_t xo = 0; xo < d.wo; ++xo)
                                orow[xo] += wv * xr[xo * d.stride];
                        }
                    }
                }
        }
    }
}

template <class T>
void conv2d_bwd(const ConvDims& d, const T* xpad, const T* wt, const T* g, T* dxpad, T* dw, T* db) {
    const int64_t hp = d.h + 2 * d.pad, wp = d.w + 2 * d.pad;
    if (db) {
        for (int64_t co = 0; co < d.cout; ++co) db[co] = sum8(g + co * d.ho * d.wo, d.ho * d.wo);
    }
    if (d.kh == 1 && d.kw == 1 && d.stride == 1 && d.groups == 1) {
        if (dw) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (d.cout >= 4)
#endif
            for (int64_t co = 0; co < d.cout; ++co)
                for (int64_t ci = 0; ci < d.cin; ++ci)
                    dw[co * d.cin + ci] =
                        dot8(g + co * d.ho * d.wo, xpad + ci * hp * wp, d.ho * d.wo);
        }
        if (dxpad) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (d.cin >= 4)
#endif
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                T* dxi = dxpad + ci * hp * wp;
                for (int64_t co = 0; co < d.cout; ++co) {
                    const T wv = wt[co * d.cin + ci];
                    const T* gc = g + co * d.ho * d.wo;
                    for (int64_t pix = 0; pix < d.ho * d.wo; ++pix) dxi[pix] += wv * gc[pix];
                }
            }
        }
        return;
    }
    if (dw) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (d.cout >= 4)
#endif
        for (int64_t co = 0; co < d.cout; ++co) {
            const int64_t gi = co / d.cout_g;
            for (int64_t ci = 0; ci < d.cin_g; ++ci)
                for (int64_t ky = 0; ky < d.kh; ++ky)
                    for (int64_t kx = 0; kx < d.kw; ++kx) {
                        T acc = 0;
                        const T* xc = xpad + (gi * d.cin_g + ci) * hp * wp;
                        for (int64_t yo = 0; yo < d.ho; ++yo) {
                            const T* gr = g + (co * d.ho + yo) * d.wo;
                            const T* xr = xc + (yo * d.stride + ky) * wp + kx;
                            if (d.stride == 1) {
                                acc += dot8(gr, xr, d.wo);
                            } else {
                                for (int64_t xo = 0; xo < d.wo; ++xo)
                                    acc += gr[xo] * xr[xo * d.stride];
                            }
                        }
                        dw[((co * d.cin_g + ci) * d.kh + ky) * d.kw + kx] = acc;
                    }
        }
    }
    if (dxpad) {
        // Scatter g through the kernel, one shifted row AXPY per tap;
        // deterministic: each padded-input cell is owned by one (ci)
        // iteration and accumulated in fixed (co,ky,kx,yo) order.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (d.cin >= 4)
#endif
        for (int64_t ci_full = 0; ci_full < d.cin; ++ci_full) {
            const int64_t gi = ci_full / d.cin_g, ci = ci_full % d.cin_g;
            T* dxi = dxpad + ci_full * hp * wp;
            for (int64_t co = gi * d.cout_g; co < (gi + 1) * d.cout_g; ++co) {
                const T* wc = wt + ((co * d.cin_g + ci) * d.kh) * d.kw;
                const T* gc = g + co * d.ho * d.wo;
                for (int64_t ky = 0; ky < d.kh; ++ky)
                    for (int64_t kx = 0; kx < d.kw; ++kx) {
                        const T wv = wc[ky * d.kw + kx];
                        for (int64_t yo = 0; yo < d.ho; ++yo) {
                            T* dxr = dxi + (yo * d.stride + ky) * wp + kx;
                            const T* gr = gc + yo * d.wo;
                            if (d.stride == 1) {
                                for (int64_t xo = 0; xo < d.wo; ++xo) dxr[xo] += wv * gr[xo];
                            } else {
                                for (int64_t xo = 0; xo < d.wo; ++xo)
                                    dxr[xo * d.stride] += wv * gr[xo];
                            }
                        }
                    }
            }
        }
    }
}

template <class T>
std::vector<T> unpad_chw(const std::vector<T>& xp, int64_t c, int64_t h, int64_t w, int64_t p) {
    if (p == 0) return xp;
    const int64_t hp = h + 2 * p, wp = w + 2 * p;
    std::vector<T> out(static_cast<size_t>(c * h * w));
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            std::copy(xp.begin() + (ch * hp + y + p) * wp + p,
                      xp.begin() + (ch * hp + y + p) * wp + p + w, out.begin() + (ch * h + y) * w);
    return out;
}

} // namespace detail

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, int64_t stride, int64_t pad,
              int64_t groups, MacCat cat = MacCat::plumbing) {
    check(x.value.rank() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
    check(w.value.rank() == 4, "conv2d: weight must be [Cout,Cin/g,kh,kw], got " + shape_str(w.shape()));
    detail::ConvDims d;
    d.cin = x.shape()[0], d.h = x.shape()[1], d.w = x.shape()[2];
    d.cout = w.shape()[0], d.kh = w.shape()[2], d.kw = w.shape()[3];
    d.groups = groups, d.stride = stride, d.pad = pad;
    check(groups >= 1 && d.cin % groups == 0 && d.cout % groups == 0,
          "conv2d: groups " + std::to_string(groups) + " must divide channels " +
              shape_str(x.shape()) + "/" + shape_str(w.shape()));
    d.cin_g = d.cin / groups, d.cout_g = d.cout / groups;
    check(w.shape()[1] == d.cin_g, "conv2d: weight in-channels " + shape_str(w.shape()) +
                                       " disagree with input " + shape_str(x.shape()) +
                                       " at groups " + std::to_string(groups));
    check(stride >= 1, "conv2d: stride must be positive");
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    check(d.ho >= 1 && d.wo >= 1, "conv2d: kernel " + shape_str(w.shape()) +
                                      " larger than padded input " + shape_str(x.shape()));
    if (bias)
        check(bias->value.numel() == d.cout, "conv2d: bias size " + shape_str(bias->shape()) +
                                                 " vs out channels " + std::to_string(d.cout));

    count_macs(cat, static_cast<uint64_t>(d.cout * d.ho * d.wo) *
                        static_cast<uint64_t>(d.cin_g * d.kh * d.kw));

    // pad == 0 runs directly on the input buffer; no padded copy exists then.
    std::vector<T> xpadbuf;
    if (pad > 0) xpadbuf = detail::pad_chw(x.value.data(), d.cin, d.h, d.w, pad);
    const T* xsrc = pad > 0 ? xpadbuf.data() : x.value.data();
    std::vector<T> out(static_cast<size_t>(d.cout * d.ho * d.wo));
    detail::conv2d_fwd(d, xsrc, w.value.data(), bias ? bias->value.data() : nullptr, out.data());
    Tensor<T> v(Shape{d.cout, d.ho, d.wo}, std::move(out));

    Tape<T>* tp = detail::pick_tape(x, w);
    if (bias && bias->tracked()) {
        check(!tp || tp == bias->tape, "conv2d: operands live on different tapes");
        tp = bias->tape;
    }
    if (!tp) return Var<T>(std::move(v));
    int ix = x.id, iw = w.id, ib = bias ? bias->id : -1;
    Tensor<T> xv = x.value, wv = w.value;
    return tp->node(std::move(v), [=](const std::vector<T>& g, Tape<T>& t) {
        std::vector<T> xp;
        if (d.pad > 0) xp = detail::pad_chw(xv.data(), d.cin, d.h, d.w, d.pad);
        const T* xs = d.pad > 0 ? xp.data() : xv.data();
        const int64_t hp = d.h + 2 * d.pad, wp = d.w + 2 * d.pad;
        std::vector<T> dxp, dw, db;
        if (ix >= 0) dxp.assign(static_cast<size_t>(d.cin * hp * wp), T(0));
        if (iw >= 0) dw.assign(static_cast<size_t>(wv.numel()), T(0));
        if (ib >= 0) db.assign(static_cast<size_t>(d.cout), T(0));
        detail::conv2d_bwd(d, xs, wv.data(), g.data(), ix >= 0 ? dxp.data() : nullptr,
                           iw >= 0 ? dw.data() : nullptr, ib >= 0 ? db.data() : nullptr);
        if (ix >= 0)
            t.add_grad(ix, d.pad > 0 ? detail::unpad_chw(dxp, d.cin, d.h, d.w, d.pad)
                                     : std::move(dxp));
        if (iw >= 0) t.add_grad(iw, std::move(dw));
        if (ib >= 0) t.add_grad(ib, std::move(db));
    });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t stride, int64_t pad,
              int64_t groups, MacCat cat = MacCat::plumbing) {
    return conv2d(x, w, &bias, stride, pad, groups, cat);
}

template <class T>
Var<T> conv2d_nobias(const Var<T>& x, const Var<T>& w, int64_t stride, int64_t pad, int64_t groups,
                     MacCat cat = MacCat::plumbing) {
    return conv2d(x, w, static_cast<const Var<T>*>(nullptr), stride, pad, groups, cat);
}

// 1x1 conv, the workhorse projection.
template <class T>
Var<T> pointwise(const Var<T>& x, const Var<T>& w, MacCat cat) {
    return conv2d_nobias(x, w, 1, 0, 1, cat);
}

} // namespace tformer
