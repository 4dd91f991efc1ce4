#pragma once

// Primitive tape operations: elementwise arithmetic with broadcasting, matmul,
// reductions, shape surgery, activations. Every op computes its value eagerly
// and, when an input is tracked, registers one backward closure. Closures call
// only raw kernels (never tape ops), so the tape never grows during backward.
//
// Multiply counts are emitted by the forward wrappers in bulk; the numbers are
// the exact multiplies the kernels execute, not estimates.

#include <algorithm>
#include <cmath>

#include "tformer/macs.hpp"
#include "tformer/tape.hpp"
#include "tformer/threads.hpp"

namespace tformer {

namespace detail {

// Dot product over eight independent accumulator lanes (lane l sums indices
// congruent to l mod 8, remainder handled by a scalar tail). The order is
// fixed by the code, so results are reproducible run to run; the lane split
// exists so the compiler can keep a vector accumulator instead of a serial
// add chain.
template <class T>
T dot8(const T* a, const T* b, int64_t n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    T tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

// ---- raw matmul kernels; fixed accumulation order per output element ----

template <class T>
void gemm_nn(int64_t m, int64_t k, int64_t n, const T* a, const T* b, T* c) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m >= 8)
#endif
    for (int64_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        std::fill(ci, ci + n, T(0));
        for (int64_t l = 0; l < k; ++l) {
            const T ail = a[i * k + l];
            const T* bl = b + l * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += ail * bl[j];
        }
    }
}

// c[m,k] = a[m,n] * b[k,n]^T
template <class T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m >= 8)
#endif
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t l = 0; l < k; ++l) {
            c[i * k + l] = dot8(a + i * n, b + l * n, n);
        }
    }
}

// c[k,n] = a[m,k]^T * b[m,n]
template <class T>
void gemm_tn(int64_t m, int64_t k, int64_t n, const T* a, const T* b, T* c) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (k >= 8)
#endif
    for (int64_t l = 0; l < k; ++l) {
        T* cl = c + l * n;
        std::fill(cl, cl + n, T(0));
        for (int64_t i = 0; i < m; ++i) {
            const T ail = a[i * k + l];
            const T* bi = b + i * n;
            for (int64_t j = 0; j < n; ++j) cl[j] += ail * bi[j];
        }
    }
}

// ---- broadcasting ----

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* where) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument(std::string(where) + ": shapes not broadcastable " +
                                        shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides padded/zeroed for broadcasting against `out`.
inline std::vector<int64_t> bcast_strides(const Shape& s, const Shape& out) {
    std::vector<int64_t> st(out.size(), 0);
    int64_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        size_t oi = i + (out.size() - s.size());
        st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : acc;
        acc *= s[i];
    }
    return st;
}

// Nonzero when `s` broadcasts against `out` by replicating one contiguous
// trailing block (every reduced axis precedes every kept axis); returns the
// block length, i.e. numel(s).
inline int64_t bcast_trailing_block(const Shape& s, const Shape& out) {
    auto st = bcast_strides(s, out);
    size_t p = 0;
    while (p < st.size() && st[p] == 0) ++p;
    if (p == 0 || p == st.size()) return 0;
    int64_t acc = 1;
    for (size_t d = st.size(); d-- > p;) {
        if (st[d] != acc) return 0;
        acc *= out[d];
    }
    return acc == numel(s) ? acc : 0;
}

// Nonzero when `s` broadcasts against `out` by repeating each element over a
// contiguous trailing range (every kept axis precedes every reduced axis);
// returns the repetition length, i.e. numel(out) / numel(s).
inline int64_t bcast_leading_block(const Shape& s, const Shape& out) {
    auto st = bcast_strides(s, out);
    size_t q = st.size();
    while (q > 0 && st[q - 1] == 0) --q;
    if (q == 0 || q == st.size()) return 0;
    int64_t inner = 1;
    for (size_t d = q; d < st.size(); ++d) inner *= out[d];
    int64_t expect = 1;
    for (size_t d = q; d-- > 0;) {
        if (st[d] != expect) return 0;
        expect *= out[d];
    }
    return expect == numel(s) ? inner : 0;
}

// Eight-lane strided sum; fixed order for reproducibility, lanes so the
// compiler can vectorize the reduction.
template <class T>
T sum8(const T* a, int64_t n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i];
        s1 += a[i + 1];
        s2 += a[i + 2];
        s3 += a[i + 3];
        s4 += a[i + 4];
        s5 += a[i + 5];
        s6 += a[i + 6];
        s7 += a[i + 7];
    }
    T tail = 0;
    for (; i < n; ++i) tail += a[i];
    return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

template <class T, class F>
void bcast_apply(const Shape& out, const Shape& sa, const T* a, const Shape& sb, const T* b,
                 T* dst, F&& f) {
    const int64_t n = numel(out);
    if (sa == out && sb == out) {
        for (int64_t i = 0; i < n; ++i) dst[i] = f(a[i], b[i]);
        return;
    }
    // Block fast paths for the shapes this model actually broadcasts: one
    // full-shape operand against a scalar, a shared trailing block, or a
    // per-leading-index value.
    if (sa == out) {
        if (numel(sb) == 1) {
            const T bv = b[0];
            for (int64_t i = 0; i < n; ++i) dst[i] = f(a[i], bv);
            return;
        }
        if (int64_t inner = bcast_trailing_block(sb, out)) {
            for (int64_t base = 0; base < n; base += inner)
                for (int64_t j = 0; j < inner; ++j) dst[base + j] = f(a[base + j], b[j]);
            return;
        }
        if (int64_t rep = bcast_leading_block(sb, out)) {
            const int64_t m = n / rep;
            for (int64_t i = 0; i < m; ++i) {
                const T bv = b[i];
                T* dr = dst + i * rep;
                const T* ar = a + i * rep;
                for (int64_t j = 0; j < rep; ++j) dr[j] = f(ar[j], bv);
            }
            return;
        }
    } else if (sb == out) {
        if (numel(sa) == 1) {
            const T av = a[0];
            for (int64_t i = 0; i < n; ++i) dst[i] = f(av, b[i]);
            return;
        }
        if (int64_t inner = bcast_trailing_block(sa, out)) {
            for (int64_t base = 0; base < n; base += inner)
                for (int64_t j = 0; j < inner; ++j) dst[base + j] = f(a[j], b[base + j]);
            return;
        }
        if (int64_t rep = bcast_leading_block(sa, out)) {
            const int64_t m = n / rep;
            for (int64_t i = 0; i < m; ++i) {
                const T av = a[i];
                T* dr = dst + i * rep;
                const T* br = b + i * rep;
                for (int64_t j = 0; j < rep; ++j) dr[j] = f(av, br[j]);
            }
            return;
        }
    }
    auto sta = bcast_strides(sa, out);
    auto stb = bcast_strides(sb, out);
    std::vector<int64_t> idx(out.size(), 0);
    for (int64_t i = 0; i < n; ++i) {
        int64_t ia = 0, ib = 0;
        for (size_t d = 0; d < out.size(); ++d) {
            ia += idx[d] * sta[d];
            ib += idx[d] * stb[d];
        }
        dst[i] = f(a[ia], b[ib]);
        for (size_t d = out.size(); d-- > 0;) {
            if (++idx[d] < out[d]) break;
            idx[d] = 0;
        }
    }
}

// Sum `g` (shaped `out`) down to shape `s` (inverse of broadcasting).
template <class T>
std::vector<T> reduce_to_shape(const std::vector<T>& g, const Shape& out, const Shape& s) {
    if (s == out) return g;
    const int64_t total = numel(out);
    if (numel(s) == 1) return std::vector<T>(1, sum8(g.data(), total));
    if (int64_t inner = bcast_trailing_block(s, out)) {
        std::vector<T> r(g.begin(), g.begin() + inner);
        for (int64_t base = inner; base < total; base += inner) {
            const T* gb = g.data() + base;
            for (int64_t j = 0; j < inner; ++j) r[static_cast<size_t>(j)] += gb[j];
        }
        return r;
    }
    if (int64_t rep = bcast_leading_block(s, out)) {
        const int64_t m = total / rep;
        std::vector<T> r(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) r[static_cast<size_t>(i)] = sum8(g.data() + i * rep, rep);
        return r;
    }
    std::vector<T> r(static_cast<size_t>(numel(s)), T(0));
    auto st = bcast_strides(s, out);
    std::vector<int64_t> idx(out.size(), 0);
    for (int64_t i = 0; i < total; ++i) {
        int64_t is = 0;
        for (size_t d = 0; d < out.size(); ++d) is += idx[d] * st[d];
        r[static_cast<size_t>(is)] += g[static_cast<size_t>(i)];
        for (size_t d = out.size(); d-- > 0;) {
            if (++idx[d] < out[d]) break;
            idx[d] = 0;
        }
    }
    return r;
}

template <class T>
Tape<T>* pick_tape(const Var<T>& a, const Var<T>& b) {
    if (a.tracked() && b.tracked())
        check(a.tape == b.tape, "op: operands live on different tapes");
    return a.tracked() ? a.tape : (b.tracked() ? b.tape : nullptr);
}

} // namespace detail

// ---- elementwise binary ----

template <class T, class FwdF>
Var<T> binary_op(const Var<T>& a, const Var<T>& b, FwdF&& f,
                 typename Tape<T>::BackwardFn bwd, Tape<T>* tape) {
    Shape out = detail::broadcast_shape(a.shape(), b.shape(), "binary op");
    std::vector<T> d(static_cast<size_t>(numel(out)));
    detail::bcast_apply(out, a.shape(), a.value.data(), b.shape(), b.value.data(), d.data(), f);
    Tensor<T> v(out, std::move(d));
    if (!tape) return Var<T>(std::move(v));
    return tape->node(std::move(v), std::move(bwd));
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    Tape<T>* tp = detail::pick_tape(a, b);
    Shape out = detail::broadcast_shape(a.shape(), b.shape(), "add");
    auto sa = a.shape(), sb = b.shape();
    int ia = a.id, ib = b.id;
    return binary_op<T>(
        a, b, [](T x, T y) { return x + y; },
        [=](const std::vector<T>& g, Tape<T>& t) {
            if (ia >= 0) t.add_grad(ia, detail::reduce_to_shape(g, out, sa));
            if (ib >= 0) t.add_grad(ib, detail::reduce_to_shape(g, out, sb));
        },
        tp);
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    Tape<T>* tp = detail::pick_tape(a, b);
    Shape out = detail::broadcast_shape(a.shape(), b.shape(), "sub");
    auto sa = a.shape(), sb = b.shape();
    int ia = a.id, ib = b.id;
    return binary_op<T>(
        a, b, [](T x, T y) { return x - y; },
        [=](const std::vector<T>& g, Tape<T>& t) {
            if (ia >= 0) t.add_grad(ia, detail::reduce_to_shape(g, out, sa));
            if (ib >= 0) {
                auto r = detail::reduce_to_shape(g, out, sb);
                for (auto& x : r) x = -x;
                t.add_grad(ib, std::move(r));
            }
        },
        tp);
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b, MacCat cat = MacCat::other) {
    Tape<T>* tp = detail::pick_tape(a, b);
    Shape out = detail::broadcast_shape(a.shape(), b.shape(), "mul");
    count_macs(cat, static_cast<uint64_t>(numel(out)));
    auto sa = a.shape(), sb = b.shape();
    int ia = a.id, ib = b.id;
    Tensor<T> av = a.value, bv = b.value;
    return binary_op<T>(
        a, b, [](T x, T y) { return x * y; },
        [=](const std::vector<T>& g, Tape<T>& t) {
            const int64_t n = numel(out);
            if (ia >= 0) {
                std::vector<T> gb(static_cast<size_t>(n));
                detail::bcast_apply(out, Shape{out}, g.data(), sb, bv.data(), gb.data(),
                                    [](T x, T y) { return x * y; });
                t.add_grad(ia, detail::reduce_to_shape(gb, out, sa));
            }
            if (ib >= 0) {
                std::vector<T> ga(static_cast<size_t>(n));
                detail::bcast_apply(out, Shape{out}, g.data(), sa, av.data(), ga.data(),
                                    [](T x, T y) { return x * y; });
                t.add_grad(ib, detail::reduce_to_shape(ga, out, sb));
            }
        },
        tp);
}

// Quotients count one multiply each.
template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b, MacCat cat = MacCat::other) {
    Tape<T>* tp = detail::pick_tape(a, b);
    Shape out = detail::broadcast_shape(a.shape(), b.shape(), "div");
    count_macs(cat, static_cast<uint64_t>(numel(out)));
    auto sa = a.shape(), sb = b.shape();
    int ia = a.id, ib = b.id;
    Tensor<T> av = a.value, bv = b.value;
    return binary_op<T>(
        a, b, [](T x, T y) { return x / y; },
        [=](const std::vector<T>& g, Tape<T>& t) {
            const int64_t n = numel(out);
            if (ia >= 0) {
                std::vector<T> ga(static_cast<size_t>(n));
                detail::bcast_apply(out, Shape{out}, g.data(), sb, bv.data(), ga.data(),
                                    [](T x, T y) { return x / y; });
                t.add_grad(ia, detail::reduce_to_shape(ga, out, sa));
            }
            if (ib >= 0) {
                // d/db (a/b) = -a / b^2
                std::vector<T> q(static_cast<size_t>(n));
                detail::bcast_apply(out, sa, av.data(), sb, bv.data(), q.data(),
                                    [](T x, T y) { return -x / (y * y); });
                for (int64_t i = 0; i < n; ++i) q[static_cast<size_t>(i)] *= g[static_cast<size_t>(i)];
                t.add_grad(ib, detail::reduce_to_shape(q, out, sb));
            }
        },
        tp);
}

// ---- elementwise unary ----

template <class T, class F, class DF>
Var<T> unary_op(const Var<T>& a, F&& f, DF&& df) {
    const int64_t n = a.value.numel();
    std::vector<T> d(static_cast<size_t>(n));
    const T* x = a.value.data();
    for (int64_t i = 0; i < n; ++i) d[i] = f(x[i]);
    Tensor<T> v(a.shape(), std::move(d));
    if (!a.tracked()) return Var<T>(std::move(v));
    int ia = a.id;
    Tensor<T> av = a.value;
    return a.tape->node(std::move(v), [ia, av, df](const std::vector<T>& g, Tape<T>& t) {
        std::vector<T> r(g.size());
        const T* x = av.data();
        for (size_t i = 0; i < g.size(); ++i) r[i] = g[i] * df(x[i]);
        t.add_grad(ia, std::move(r));
    });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
    return unary_op(a, [c](T x) { return x + c; }, [](T) { return T(1); });
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, T c, MacCat cat = MacCat::other) {
    count_macs(cat, static_cast<uint64_t>(a.value.numel()));
    return unary_op(a, [c](T x) { return x * c; }, [c](T) { return c; });
}

template <class T>
Var<T> neg(const Var<T>& a) {
    return unary_op(a, [](T x) { return -x; }, [](T) { return T(-1); });
}

template <class T>
Var<T> exp(const Var<T>& a) {
    using std::exp;
    const int64_t n = a.value.numel();
    std::vector<T> d(static_cast<size_t>(n));
    const T* x = a.value.data();
    for (int64_t i = 0; i < n; ++i) d[i] = exp(x[i]);
    Tensor<T> v(a.shape(), std::move(d));
    if (!a.tracked()) return Var<T>(std::move(v));
    int ia = a.id;
    Tensor<T> saved = v; // e^x reused in the derivative
    return a.tape->node(std::move(v), [ia, saved](const std::vector<T>& g, Tape<T>& t) {
        std::vector<T> r(g.size());
        const T* e = saved.data();
        for (size_t i = 0; i < g.size(); ++i) r[i] = g[i] * e[i];
        t.add_grad(ia, std::move(r));
    });
}

template <class T>
Var<T> sigmoid(const Var<T>& a, MacCat cat = MacCat::activation) {
    count_macs(cat, static_cast<uint64_t>(a.value.numel())); // one multiply (the divide)
    return unary_op(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T x) {
            T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) - s);
        });
}

template <class T>
Var<T> relu(const Var<T>& a) {
    return unary_op(a, [](T x) { return x > T(0) ? x : T(0); },
                    [](T x) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    return unary_op(a, [slope](T x) { return x > T(0) ? x : slope * x; },
                    [slope](T x) { return x > T(0) ? T(1) : slope; });
}

// hardswish(x) = x * clamp(x+3, 0, 6) / 6; two multiplies per element.
template <class T>
Var<T> hardswish(const Var<T>& a, MacCat cat = MacCat::activation) {
    count_macs(cat, static_cast<uint64_t>(2 * a.value.numel()));
    return unary_op(
        a,
        [](T x) {
            T u = std::clamp(x + T(3), T(0), T(6));
            return x * u * (T(1) / T(6));
        },
        [](T x) {
            if (x <= T(-3)) return T(0);
            if (x >= T(3)) return T(1);
            return (T(2) * x + T(3)) * (T(1) / T(6));
        });
}

template <class T>
Var<T> abs(const Var<T>& a) {
    return unary_op(a, [](T x) { return std::abs(x); },
                    [](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

// Pass-through gradient inside [lo, hi] (inclusive), zero outside.
template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    return unary_op(a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
                    [lo, hi](T x) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// ---- reductions ----

template <class T>
Var<T> sum_all(const Var<T>& a) {
    T s = 0;
    const T* x = a.value.data();
    for (int64_t i = 0; i < a.value.numel(); ++i) s += x[i];
    Tensor<T> v = Tensor<T>::scalar(s);
    if (!a.tracked()) return Var<T>(std::move(v));
    int ia = a.id;
    int64_t n = a.value.numel();
    return a.tape->node(std::move(v), [ia, n](const std::vector<T>& g, Tape<T>& t) {
        t.add_grad(ia, std::vector<T>(static_cast<size_t>(n), g[0]));
    });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
    return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.value.numel()));
}

// Rank-2 [m,n] -> [m]: per-row sums.
template <class T>
Var<T> sum_rows(const Var<T>& a) {
    check(a.value.rank() == 2, "sum_rows: expects rank-2, got " + shape_str(a.shape()));
    const int64_t m = a.value.dim(0), n = a.value.dim(1);
    std::vector<T> d(static_cast<size_t>(m), T(0));
    const T* x = a.value.data();
    for (int64_t i = 0; i < m; ++i) {
        T s = 0;
        for (int64_t j = 0; j < n; ++j) s += x[i * n + j];
        d[static_cast<size_t>(i)] = s;
    }
    Tensor<T> v(Shape{m}, std::move(d));
    if (!a.tracked()) return Var<T>(std::move(v));
    int ia = a.id;
    return a.tape->node(std::move(v), [ia, m, n](const std::vector<T>& g, Tape<T>& t) {
        std::vector<T> r(static_cast<size_t>(m * n));
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) r[static_cast<size_t>(i * n + j)] = g[static_cast<size_t>(i)];
        t.add_grad(ia, std::move(r));
    });
}

// ---- matmul / transpose / shape surgery ----

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, MacCat cat = MacCat::other) {
    check(a.value.rank() == 2 && b.value.rank() == 2,
          "matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
    check(a.value.dim(1) == b.value.dim(0),
          "matmul: inner dims disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int64_t m = a.value.dim(0), k = a.value.dim(1), n = b.value.dim(1);
    count_macs(cat, static_cast<uint64_t>(m) * static_cast<uint64_t>(k) * static_cast<uint64_t>(n));
    std::vector<T> d(static_cast<size_t>(m * n));
    detail::gemm_nn(m, k, n, a.value.data(), b.value.data(), d.data());
    Tensor<T> v(Shape{m, n}, std::move(d));
    Tape<T>* tp = detail::pick_tape(a, b);
    if (!tp) return Var<T>(std::move(v));
    int ia = a.id, ib = b.id;
    Tensor<T> av = a.value, bv = b.value;
    return tp->node(std::move(v), [=](const std::vector<T>& g, Tape<T>& t) {
        if (ia >= 0) {
            std::vector<T> da(static_cast<size_t>(m * k));
            detail::gemm_nt(m, n, k, g.data(), bv.data(), da.data());
            t.add_grad(ia, std::move(da));
        }
        if (ib >= 0) {
            std::vector<T> db(static_cast<size_t>(k * n));
            detail::gemm_tn(m, k, n, av.data(), g.data(), db.data());
            t.add_grad(ib, std::move(db));
        }
    });
}

template <class T>
Var<T> transpose2d(const Var<T>& a) {
    check(a.value.rank() == 2, "transpose2d: expects rank-2, got " + shape_str(a.shape()));
    const int64_t m = a.value.dim(0), n = a.value.dim(1);
    std::vector<T> d(static_cast<size_t>(m * n));
    const T* x = a.value.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) d[static_cast<size_t>(j * m + i)] = x[i * n + j];
    Tensor<T> v(Shape{n, m}, std::move(d));
    if (!a.tracked()) return Var<T>(std::move(v));
    int ia = a.id;
    return a.tape->node(std::move(v), [ia, m, n](const std::vector<T>& g, Tape<T>& t) {
        std::vector<T> r(static_cast<size_t>(m * n));
        for (int64_t j = 0; j < n; ++j)
            for (int64_t i = 0; i < m; ++i) r[static_cast<size_t>(i * n + j)] = g[static_cast<size_t>(j * m + i)];
        t.add_grad(ia, std::move(r));
    });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
    check(numel(s) == a.value.numel(),
          "reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(s));
    Tensor<T> v = a.value.reshape(s);
    if (!a.tracked()) return Var<T>(std::move(v));
    int ia = a.id;
    return a.tape->node(std::move(v), [ia](const std::vector<T>& g, Tape<T>& t) {
        t.add_grad(ia, g); // same layout, different shape
    });
}

// Concatenate along axis 0 (the channel/row axis in this codebase).
template <class T>
Var<T> concat0(const std::vector<Var<T>>& parts) {
    check(!parts.empty(), "concat0: empty input list");
    Shape rest(parts[0].shape().begin() + 1, parts[0].shape().end());
    int64_t total0 = 0;
    Tape<T>* tp = nullptr;
    for (const auto& p : parts) {
        Shape r(p.shape().begin() + 1, p.shape().end());
        check_shape_eq(rest, r, "concat0 (trailing dims)");
        total0 += p.shape()[0];
        if (p.tracked()) {
            check(!tp || tp == p.tape, "concat0: operands live on different tapes");
            tp = p.tape;
        }
    }
    Shape out = parts[0].shape();
    out[0] = total0;
    std::vector<T> d(static_cast<size_t>(numel(out)));
    int64_t off = 0;
    std::vector<std::pair<int, std::pair<int64_t, int64_t>>> spans; // (id, (offset, len))
    for (const auto& p : parts) {
        int64_t len = p.value.numel();
        std::copy(p.value.data(), p.value.data() + len, d.begin() + off);
        spans.push_back({p.id, {off, len}});
        off += len;
    }
    Tensor<T> v(out, std::move(d));
    if (!tp) return Var<T>(std::move(v));
    return tp->node(std::move(v), [spans](const std::vector<T>& g, Tape<T>& t) {
        for (const auto& [id, span] : spans) {
            if (id < 0) continue;
            t.add_grad(id, std::vector<T>(g.begin() + span.first, g.begin() + span.first + span.second));
        }
    });
}

// Slice [from, to) along axis 0.
template <class T>
Var<T> slice0(const Var<T>& a, int64_t from, int64_t to) {
    check(a.value.rank() >= 1 && 0 <= from && from < to && to <= a.shape()[0],
          "slice0: bad range on " + shape_str(a.shape()));
    int64_t stride = a.value.numel() / a.shape()[0];
    Shape out = a.shape();
    out[0] = to - from;
    std::vector<T> d(a.value.data() + from * stride, a.value.data() + to * stride);
    Tensor<T> v(out, std::move(d));
    if (!a.tracked()) return Var<T>(std::move(v));
    int ia = a.id;
    int64_t total = a.value.numel(), off = from * stride, len = (to - from) * stride;
    return a.tape->node(std::move(v), [ia, total, off, len](const std::vector<T>& g, Tape<T>& t) {
        std::vector<T> r(static_cast<size_t>(total), T(0));
        std::copy(g.begin(), g.begin() + len, r.begin() + off);
        t.add_grad(ia, std::move(r));
    });
}

// ---- layer norm over the channel axis ----

// x: [C, ...spatial]; per spatial position, normalize across channels and
// scale by a learned per-channel weight. No bias term.
template <class T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& weight, T eps = T(1e-5)) {
    check(x.value.rank() >= 1, "layer_norm_channels: scalar input");
    const int64_t c = x.shape()[0];
    check(weight.value.numel() == c, "layer_norm_channels: weight size " +
                                         shape_str(weight.shape()) + " vs channels " +
                                         std::to_string(c));
    const int64_t n = x.value.numel() / c;
    count_macs(MacCat::norm, static_cast<uint64_t>(x.value.numel() * 2)); // (x-mu)*istd, *w
    const T* xd = x.value.data();
    const T* wd = weight.value.data();
    std::vector<T> d(static_cast<size_t>(c * n));
    std::vector<T> mu(static_cast<size_t>(n)), istd(static_cast<size_t>(n));
    for (int64_t p = 0; p < n; ++p) {
        T m = 0;
        for (int64_t ch = 0; ch < c; ++ch) m += xd[ch * n + p];
        m /= static_cast<T>(c);
        T v = 0;
        for (int64_t ch = 0; ch < c; ++ch) {
            T dlt = xd[ch * n + p] - m;
            v += dlt * dlt;
        }
        v /= static_cast<T>(c);
        mu[static_cast<size_t>(p)] = m;
        istd[static_cast<size_t>(p)] = T(1) / std::sqrt(v + eps);
    }
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < n; ++p)
            d[static_cast<size_t>(ch * n + p)] =
                (xd[ch * n + p] - mu[static_cast<size_t>(p)]) * istd[static_cast<size_t>(p)] * wd[ch];
    Tensor<T> v(x.shape(), std::move(d));
    Tape<T>* tp = detail::pick_tape(x, weight);
    if (!tp) return Var<T>(std::move(v));
    int ix = x.id, iw = weight.id;
    Tensor<T> xv = x.value, wv = weight.value;
    return tp->node(std::move(v), [=](const std::vector<T>& g, Tape<T>& t) {
        const T* xd = xv.data();
        const T* wd = wv.data();
        std::vector<T> dx, dw;
        if (ix >= 0) dx.assign(static_cast<size_t>(c * n), T(0));
        if (iw >= 0) dw.assign(static_cast<size_t>(c), T(0));
        for (int64_t p = 0; p < n; ++p) {
            T m = 0;
            for (int64_t ch = 0; ch < c; ++ch) m += xd[ch * n + p];
            m /= static_cast<T>(c);
            T var = 0;
            for (int64_t ch = 0; ch < c; ++ch) {
                T dlt = xd[ch * n + p] - m;
                var += dlt * dlt;
            }
            var /= static_cast<T>(c);
            T is = T(1) / std::sqrt(var + eps);
            // h = (x - mu) * istd; dL/dh_ch = g_ch * w_ch
            T sum_gh = 0, sum_gh_h = 0;
            for (int64_t ch = 0; ch < c; ++ch) {
                T h = (xd[ch * n + p] - m) * is;
                T gh = g[static_cast<size_t>(ch * n + p)] * wd[ch];
                sum_gh += gh;
                sum_gh_h += gh * h;
                if (!dw.empty()) dw[static_cast<size_t>(ch)] += g[static_cast<size_t>(ch * n + p)] * h;
            }
            if (!dx.empty()) {
                for (int64_t ch = 0; ch < c; ++ch) {
                    T h = (xd[ch * n + p] - m) * is;
                    T gh = g[static_cast<size_t>(ch * n + p)] * wd[ch];
                    dx[static_cast<size_t>(ch * n + p)] =
                        is * (gh - sum_gh / static_cast<T>(c) - h * sum_gh_h / static_cast<T>(c));
                }
            }
        }
        if (ix >= 0) t.add_grad(ix, std::move(dx));
        if (iw >= 0) t.add_grad(iw, std::move(dw));
    });
}

} // namespace tformer
