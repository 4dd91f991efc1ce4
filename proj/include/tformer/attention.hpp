#pragma once

// Taylor-expanded attention. All paths consume per-head token matrices
// [d, N] whose columns (query/key vectors) have been normalized to a fixed
// Euclidean radius; with radius 0.5 every logit q.k lies in [-0.25, 0.25],
// first-order weights 1 + q.k are >= 0.75, and the linear-time evaluation of
//
//   V'_i = (sum_j V_j + Q_i^T sum_j K_j V_j^T) / (N + Q_i^T sum_j K_j)
//
// needs only two global sums. The quadratic paths materialize the N x N
// weight matrix and exist as oracles; streaming variants recompute weights
// row by row in O(N) memory for large-N benchmarking.

#include "tformer/ops.hpp"

namespace tformer {

// ---- token normalization ----

// Scale every column of x [d, N] to Euclidean norm `radius`. A zero column
// maps to zero. Counts: one square plus one rescale per element.
template <class T>
Var<T> normalize_tokens(const Var<T>& x, T radius, MacCat cat = MacCat::qk_normalize) {
    check(x.value.rank() == 2, "normalize_tokens: expects [d,N], got " + shape_str(x.shape()));
    const int64_t d = x.shape()[0], n = x.shape()[1];
    count_macs(cat, static_cast<uint64_t>(2 * d * n));
    const T* xd = x.value.data();
    std::vector<T> out(static_cast<size_t>(d * n));
    std::vector<T> scale(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        T s = 0;
        for (int64_t a = 0; a < d; ++a) s += xd[a * n + i] * xd[a * n + i];
        const T nrm = std::sqrt(s);
        scale[static_cast<size_t>(i)] = nrm > T(0) ? radius / nrm : T(0);
    }
    for (int64_t a = 0; a < d; ++a)
        for (int64_t i = 0; i < n; ++i)
            out[static_cast<size_t>(a * n + i)] = xd[a * n + i] * scale[static_cast<size_t>(i)];
    Tensor<T> v(x.shape(), std::move(out));
    if (!x.tracked()) return Var<T>(std::move(v));
    int ix = x.id;
    Tensor<T> xv = x.value;
    return x.tape->node(std::move(v), [ix, xv, radius, d, n](const std::vector<T>& g, Tape<T>& t) {
        // y = r x / |x|; dx = (r/|x|) (g - x (x.g) / |x|^2) per column.
        const T* xd = xv.data();
        std::vector<T> dx(static_cast<size_t>(d * n), T(0));
        for (int64_t i = 0; i < n; ++i) {
            T s = 0, xg = 0;
            for (int64_t a = 0; a < d; ++a) {
                s += xd[a * n + i] * xd[a * n + i];
                xg += xd[a * n + i] * g[static_cast<size_t>(a * n + i)];
            }
            if (s <= T(0)) continue;
            const T nrm = std::sqrt(s);
            for (int64_t a = 0; a < d; ++a)
                dx[static_cast<size_t>(a * n + i)] =
                    radius / nrm * (g[static_cast<size_t>(a * n + i)] - xd[a * n + i] * xg / s);
        }
        t.add_grad(ix, std::move(dx));
    });
}

// Split [D, N] into per-head [d, N] slices, normalize each token vector.
template <class T>
std::pair<std::vector<Var<T>>, std::vector<Var<T>>> normalize_qk(const Var<T>& q, const Var<T>& k,
                                                                 T radius, int64_t heads) {
    check_shape_eq(q.shape(), k.shape(), "normalize_qk");
    check(q.value.rank() == 2 && q.shape()[0] % heads == 0,
          "normalize_qk: heads must divide channels, got " + shape_str(q.shape()) + " with " +
              std::to_string(heads) + " heads");
    const int64_t d = q.shape()[0] / heads;
    std::vector<Var<T>> qn, kn;
    for (int64_t h = 0; h < heads; ++h) {
        qn.push_back(normalize_tokens(slice0(q, h * d, (h + 1) * d), radius));
        kn.push_back(normalize_tokens(slice0(k, h * d, (h + 1) * d), radius));
    }
    return {std::move(qn), std::move(kn)};
}

// ---- linear path (one head) ----

// Exact evaluation of the order-1 Taylor attention in O(N d^2) via the two
// global sums; composed from primitives so the tape provides the backward.
template <class T>
Var<T> taylor_attention_linear(const Var<T>& qn, const Var<T>& kn, const Var<T>& v) {
    check_shape_eq(qn.shape(), kn.shape(), "taylor_attention_linear (Q~ vs K~)");
    check_shape_eq(qn.shape(), v.shape(), "taylor_attention_linear (Q~ vs V)");
    check(qn.value.rank() == 2, "taylor_attention_linear: expects [d,N]");
    const int64_t d = qn.shape()[0], n = qn.shape()[1];
    auto sv = sum_rows(v);                                               // [d]
    auto kv = matmul(kn, transpose2d(v), MacCat::attn_core);             // [d,d] = sum_j K_j V_j^T
    auto num = matmul(transpose2d(kv), qn, MacCat::attn_core);           // [d,N]
    num = add(num, reshape(sv, {d, 1}));
    auto sk = sum_rows(kn);                                              // [d]
    auto den = matmul(reshape(sk, {1, d}), qn, MacCat::attn_denominator); // [1,N]
    den = add_scalar(den, static_cast<T>(n));
    return div(num, den, MacCat::attn_divide);                           // [d,N]
}

// ---- quadratic oracles (one head) ----

enum class AttnPath { linear, quadratic_order1, quadratic_order2, softmax };

inline const char* attn_path_name(AttnPath p) {
    switch (p) {
        case AttnPath::linear: return "linear";
        case AttnPath::quadratic_order1: return "quadratic_order1";
        case AttnPath::quadratic_order2: return "quadratic_order2";
        default: return "softmax";
    }
}

// Materializes logits L = Q~^T K~ [N, N], applies the order-1 or order-2
// Taylor weight 1 + x (+ x^2/2), normalizes rows by their sums.
template <class T>
Var<T> taylor_attention_quadratic(const Var<T>& qn, const Var<T>& kn, const Var<T>& v, int order) {
    check(order == 1 || order == 2, "taylor_attention_quadratic: order must be 1 or 2");
    check_shape_eq(qn.shape(), kn.shape(), "taylor_attention_quadratic (Q~ vs K~)");
    check_shape_eq(qn.shape(), v.shape(), "taylor_attention_quadratic (Q~ vs V)");
    const int64_t n = qn.shape()[1];
    auto logits = matmul(transpose2d(qn), kn, MacCat::attn_core); // [N,N]
    Var<T> f = add_scalar(logits, T(1));
    if (order == 2)
        f = add(f, mul_scalar(mul(logits, logits, MacCat::attn_core), T(0.5), MacCat::attn_core));
    auto p = div(f, reshape(sum_rows(f), {n, 1}), MacCat::attn_divide);
    return matmul(v, transpose2d(p), MacCat::attn_core); // [d,N]
}

// Softmax oracle, same shape contract. No max-subtraction: callers guarantee
// the normalized-logit domain, where exp is tame.
template <class T>
Var<T> softmax_attention(const Var<T>& qn, const Var<T>& kn, const Var<T>& v) {
    check_shape_eq(qn.shape(), kn.shape(), "softmax_attention (Q~ vs K~)");
    check_shape_eq(qn.shape(), v.shape(), "softmax_attention (Q~ vs V)");
    const int64_t n = qn.shape()[1];
    auto logits = matmul(transpose2d(qn), kn, MacCat::attn_core);
    auto f = exp(logits);
    auto p = div(f, reshape(sum_rows(f), {n, 1}), MacCat::attn_divide);
    return matmul(v, transpose2d(p), MacCat::attn_core);
}

// ---- streaming forward-only kernels (O(N) memory) ----

namespace detail {

// exp via a degree-13 Taylor polynomial, exact to <1 ulp for |x| <= 0.28125
// (the normalized-logit domain is [-0.25, 0.25]); std::exp outside.
template <class T>
inline T exp_tight(T x) {
    if (std::abs(x) <= T(0.28125)) {
        constexpr double c[14] = {1.0,
                                  1.0,
                                  1.0 / 2,
                                  1.0 / 6,
                                  1.0 / 24,
                                  1.0 / 120,
                                  1.0 / 720,
                                  1.0 / 5040,
                                  1.0 / 40320,
                                  1.0 / 362880,
                                  1.0 / 3628800,
                                  1.0 / 39916800,
                                  1.0 / 479001600,
                                  1.0 / 6227020800.0};
        T p = static_cast<T>(c[13]);
        for (int k = 12; k >= 0; --k) p = p * x + static_cast<T>(c[k]);
        return p;
    }
    return std::exp(x);
}

} // namespace detail

// One-head streaming attention into a preallocated out [d, N]. Counts match
// the executed multiplies: linear 2Nd^2 + 2Nd; quadratic 2N^2 d + Nd
// (+2N^2 at order 2); softmax 2N^2 d + Nd.
template <class T>
void attention_stream(AttnPath path, int64_t d, int64_t n, const T* qn, const T* kn, const T* v,
                      T* out) {
    if (path == AttnPath::linear) {
        count_macs(MacCat::attn_core, static_cast<uint64_t>(2 * n * d * d));
        count_macs(MacCat::attn_denominator, static_cast<uint64_t>(n * d));
        count_macs(MacCat::attn_divide, static_cast<uint64_t>(n * d));
        // Token-major copies keep the O(N d^2) loops on contiguous memory.
        std::vector<T> kt(static_cast<size_t>(n * d)), vt(static_cast<size_t>(n * d));
        for (int64_t a = 0; a < d; ++a)
            for (int64_t j = 0; j < n; ++j) {
                kt[static_cast<size_t>(j * d + a)] = kn[a * n + j];
                vt[static_cast<size_t>(j * d + a)] = v[a * n + j];
            }
        std::vector<T> sv(static_cast<size_t>(d), T(0)), sk(static_cast<size_t>(d), T(0));
        std::vector<T> kv(static_cast<size_t>(d * d), T(0)); // kv[a*d+b] = sum_j K_aj V_bj
        for (int64_t j = 0; j < n; ++j) {
            const T* kj = kt.data() + j * d;
            const T* vj = vt.data() + j * d;
            for (int64_t a = 0; a < d; ++a) {
                const T ka = kj[a];
                sk[static_cast<size_t>(a)] += ka;
                T* kva = kv.data() + a * d;
                for (int64_t b = 0; b < d; ++b) kva[b] += ka * vj[b];
            }
            for (int64_t b = 0; b < d; ++b) sv[static_cast<size_t>(b)] += vj[b];
        }
        std::vector<T> kvt(static_cast<size_t>(d * d)); // kvt[b*d+a] = kv[a*d+b]
        for (int64_t a = 0; a < d; ++a)
            for (int64_t b = 0; b < d; ++b)
                kvt[static_cast<size_t>(b * d + a)] = kv[static_cast<size_t>(a * d + b)];
        std::vector<T> qi(static_cast<size_t>(d));
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t a = 0; a < d; ++a) qi[static_cast<size_t>(a)] = qn[a * n + i];
            const T den = static_cast<T>(n) + detail::dot8(qi.data(), sk.data(), d);
            for (int64_t b = 0; b < d; ++b) {
                const T num =
                    sv[static_cast<size_t>(b)] + detail::dot8(qi.data(), kvt.data() + b * d, d);
                out[b * n + i] = num / den;
            }
        }
        return;
    }
    const bool o2 = path == AttnPath::quadratic_order2;
    count_macs(MacCat::attn_core, static_cast<uint64_t>(2 * n * n * d) +
                                      (o2 ? static_cast<uint64_t>(2 * n * n) : 0));
    count_macs(MacCat::attn_divide, static_cast<uint64_t>(n * d));
    // Token-major copies keep the O(N^2) inner loop on contiguous memory.
    std::vector<T> kt(static_cast<size_t>(n * d)), vt(static_cast<size_t>(n * d));
    for (int64_t a = 0; a < d; ++a)
        for (int64_t j = 0; j < n; ++j) {
            kt[static_cast<size_t>(j * d + a)] = kn[a * n + j];
            vt[static_cast<size_t>(j * d + a)] = v[a * n + j];
        }
    std::vector<T> qi(static_cast<size_t>(d)), acc(static_cast<size_t>(d));
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t a = 0; a < d; ++a) qi[static_cast<size_t>(a)] = qn[a * n + i];
        std::fill(acc.begin(), acc.end(), T(0));
        T wsum = 0;
        for (int64_t j = 0; j < n; ++j) {
            const T* kj = kt.data() + j * d;
            const T* vj = vt.data() + j * d;
            const T x = detail::dot8(qi.data(), kj, d);
            T w;
            switch (path) {
                case AttnPath::quadratic_order1: w = T(1) + x; break;
                case AttnPath::quadratic_order2: w = T(1) + x + T(0.5) * (x * x); break;
                default: w = detail::exp_tight(x); break;
            }
            wsum += w;
            for (int64_t b = 0; b < d; ++b) acc[static_cast<size_t>(b)] += w * vj[b];
        }
        for (int64_t b = 0; b < d; ++b) out[b * n + i] = acc[static_cast<size_t>(b)] / wsum;
    }
}

} // namespace tformer
