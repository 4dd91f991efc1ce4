#pragma once

// Space-to-depth and depth-to-space with block size r. Pure permutations:
// no arithmetic, gradients are the inverse permutation.
//   unshuffle: out[c*r*r + dy*r + dx, y, x] = in[c, y*r + dy, x*r + dx]
//   shuffle is its exact inverse.

#include "tformer/ops.hpp"

namespace tformer {

namespace detail {

template <class T>
void unshuffle_copy(const T* in, T* out, int64_t c, int64_t h, int64_t w, int64_t r) {
    const int64_t ho = h / r, wo = w / r;
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t dy = 0; dy < r; ++dy)
            for (int64_t dx = 0; dx < r; ++dx)
                for (int64_t y = 0; y < ho; ++y)
                    for (int64_t x = 0; x < wo; ++x)
                        out[((ch * r + dy) * r + dx) * ho * wo + y * wo + x] =
                            in[ch * h * w + (y * r + dy) * w + (x * r + dx)];
}

template <class T>
void shuffle_copy(const T* in, T* out, int64_t c_in, int64_t h_in, int64_t w_in, int64_t r) {
    const int64_t c = c_in / (r * r), h = h_in * r, w = w_in * r;
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t dy = 0; dy < r; ++dy)
            for (int64_t dx = 0; dx < r; ++dx)
                for (int64_t y = 0; y < h_in; ++y)
                    for (int64_t x = 0; x < w_in; ++x)
                        out[ch * h * w + (y * r + dy) * w + (x * r + dx)] =
                            in[((ch * r + dy) * r + dx) * h_in * w_in + y * w_in + x];
}

} // namespace detail

template <class T>
Var<T> pixel_unshuffle(const Var<T>& x, int64_t r) {
    check(x.value.rank() == 3, "pixel_unshuffle: input must be [C,H,W]");
    const int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    check(h % r == 0 && w % r == 0, "pixel_unshuffle: H and W must be divisible by r");
    std::vector<T> outv(static_cast<size_t>(c * h * w));
    detail::unshuffle_copy(x.value.data(), outv.data(), c, h, w, r);
    Tensor<T> out(Shape{c * r * r, h / r, w / r}, std::move(outv));
    if (!x.tracked()) return Var<T>(std::move(out));
    Tape<T>* tape = x.tape;
    int xi = x.id;
    return tape->node(std::move(out), [=](const std::vector<T>& g, Tape<T>& t) {
        std::vector<T> dx(g.size());
        detail::shuffle_copy(g.data(), dx.data(), c * r * r, h / r, w / r, r);
        t.add_grad(xi, std::move(dx));
    });
}

template <class T>
Var<T> pixel_shuffle(const Var<T>& x, int64_t r) {
    check(x.value.rank() == 3, "pixel_shuffle: input must be [C,H,W]");
    const int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    check(c % (r * r) == 0, "pixel_shuffle: channels must be divisible by r^2");
    std::vector<T> outv(static_cast<size_t>(c * h * w));
    detail::shuffle_copy(x.value.data(), outv.data(), c, h, w, r);
    Tensor<T> out(Shape{c / (r * r), h * r, w * r}, std::move(outv));
    if (!x.tracked()) return Var<T>(std::move(out));
    Tape<T>* tape = x.tape;
    int xi = x.id;
    return tape->node(std::move(out), [=](const std::vector<T>& g, Tape<T>& t) {
        std::vector<T> dx(g.size());
        detail::unshuffle_copy(g.data(), dx.data(), c / (r * r), h * r, w * r, r);
        t.add_grad(xi, std::move(dx));
    });
}

} // namespace tformer
