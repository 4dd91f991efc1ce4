#pragma once

// Procedural clean/hazy training pairs. Clean scenes are smooth color fields
// with random rectangles and disks; haze follows the atmospheric scattering
// model hazy = clean*t + A*(1-t) with a smooth spatially varying
// transmission t in [0.3, 0.8] and airlight A in [0.7, 1.0]. Every sample is
// a pure function of (seed, index).

#include <array>

#include "tformer/rng.hpp"
#include "tformer/tensor.hpp"

namespace tformer {

template <class T>
struct SynthSample {
    Tensor<T> clean; // [3,H,W] in [0,1]
    Tensor<T> hazy;
};

// Atmospheric scattering parameters: per-channel airlight and a transmission
// that is either one scalar or a per-pixel field (row-major [H*W], doubles so
// the haze arithmetic is precision-independent of the image scalar type).
struct HazeParams {
    std::array<double, 3> airlight = {0.8, 0.8, 0.8}; // A, each in [0,1]
    double t_scalar = 1.0;                            // used when t_field empty
    std::vector<double> t_field;                      // per-pixel t in (0,1]
};

// hazy = clean*t + A*(1-t), clamped to [0,1].
template <class T>
Tensor<T> apply_haze(const Tensor<T>& clean, const HazeParams& hp) {
    check(clean.rank() == 3 && clean.shape()[0] == 3, "apply_haze: image must be [3,H,W]");
    const int64_t h = clean.shape()[1], w = clean.shape()[2];
    check(hp.t_field.empty() || static_cast<int64_t>(hp.t_field.size()) == h * w,
          "apply_haze: transmission field size mismatch");
    std::vector<T> hz(static_cast<size_t>(3 * h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const int64_t p = y * w + x;
            const double t = hp.t_field.empty() ? hp.t_scalar : hp.t_field[static_cast<size_t>(p)];
            for (int64_t c = 0; c < 3; ++c) {
                const double v = static_cast<double>(clean.data()[c * h * w + p]);
                const double a = hp.airlight[static_cast<size_t>(c)];
                hz[static_cast<size_t>(c * h * w + p)] =
                    static_cast<T>(std::min(1.0, std::max(0.0, v * t + a * (1.0 - t))));
            }
        }
    return Tensor<T>(Shape{3, h, w}, std::move(hz));
}

namespace detail {

// Smooth field in [0,1]: three random low-frequency sinusoids, amplitude-
// normalized analytically.
template <class T>
std::vector<T> smooth_field(int64_t h, int64_t w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> freq(0.5, 2.5), phase(0.0, 6.2831853),
        amp(0.4, 1.0), sgn(-1.0, 1.0);
    double fx[3], fy[3], ph[3], am[3], atot = 0;
    for (int i = 0; i < 3; ++i) {
        fx[i] = freq(rng) * (sgn(rng) < 0 ? -1 : 1);
        fy[i] = freq(rng);
        ph[i] = phase(rng);
        am[i] = amp(rng);
        atot += am[i];
    }
    std::vector<T> f(static_cast<size_t>(h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double s = 0;
            for (int i = 0; i < 3; ++i)
                s += am[i] * std::sin(6.2831853 * (fx[i] * x / double(w) + fy[i] * y / double(h)) +
                                      ph[i]);
            f[static_cast<size_t>(y * w + x)] = static_cast<T>(0.5 + 0.5 * s / atot);
        }
    return f;
}

} // namespace detail

template <class T>
Tensor<T> synth_clean(int64_t h, int64_t w, std::mt19937_64& rng) {
    std::vector<T> img(static_cast<size_t>(3 * h * w));
    for (int64_t c = 0; c < 3; ++c) {
        auto f = detail::smooth_field<T>(h, w, rng);
        std::copy(f.begin(), f.end(), img.begin() + c * h * w);
    }
    std::uniform_int_distribution<int> nshapes(6, 14);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const int ns = nshapes(rng);
    for (int s = 0; s < ns; ++s) {
        const bool disk = u01(rng) < 0.5;
        const double col[3] = {u01(rng), u01(rng), u01(rng)};
        const double alpha = 0.55 + 0.45 * u01(rng);
        if (disk) {
            const double cy = u01(rng) * h, cx = u01(rng) * w;
            const double r = (0.05 + 0.2 * u01(rng)) * std::min(h, w);
            const int64_t y0 = std::max<int64_t>(0, int64_t(cy - r) - 1);
            const int64_t y1 = std::min<int64_t>(h, int64_t(cy + r) + 2);
            const int64_t x0 = std::max<int64_t>(0, int64_t(cx - r) - 1);
            const int64_t x1 = std::min<int64_t>(w, int64_t(cx + r) + 2);
            for (int64_t y = y0; y < y1; ++y)
                for (int64_t x = x0; x < x1; ++x)
                    if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
                        for (int64_t c = 0; c < 3; ++c) {
                            auto& px = img[static_cast<size_t>(c * h * w + y * w + x)];
                            px = static_cast<T>((1 - alpha) * px + alpha * col[c]);
                        }
        } else {
            int64_t y0 = int64_t(u01(rng) * h), x0 = int64_t(u01(rng) * w);
            int64_t y1 = y0 + 1 + int64_t(u01(rng) * 0.4 * h);
            int64_t x1 = x0 + 1 + int64_t(u01(rng) * 0.4 * w);
            y1 = std::min(y1, h), x1 = std::min(x1, w);
            for (int64_t y = y0; y < y1; ++y)
                for (int64_t x = x0; x < x1; ++x)
                    for (int64_t c = 0; c < 3; ++c) {
                        auto& px = img[static_cast<size_t>(c * h * w + y * w + x)];
                        px = static_cast<T>((1 - alpha) * px + alpha * col[c]);
                    }
        }
    }
    for (auto& v : img) v = std::min(T(1), std::max(T(0), v));
    return Tensor<T>(Shape{3, h, w}, std::move(img));
}

// Random haze for one sample: smooth transmission field mapped into
// [0.3, 0.8] and one airlight value shared by the three channels.
template <class T>
HazeParams random_haze(int64_t h, int64_t w, std::mt19937_64& rng) {
    auto tfield = detail::smooth_field<T>(h, w, rng);
    std::uniform_real_distribution<double> ua(0.7, 1.0);
    const double a = ua(rng);
    HazeParams hp;
    hp.airlight = {a, a, a};
    hp.t_field.resize(static_cast<size_t>(h * w));
    for (size_t p = 0; p < hp.t_field.size(); ++p)
        hp.t_field[p] = 0.3 + 0.5 * static_cast<double>(tfield[p]);
    return hp;
}

template <class T>
SynthSample<T> synth_pair(int64_t h, int64_t w, uint64_t seed, uint64_t index) {
    auto rng = make_rng(seed, index + 1); // stream 0 reserved for model init
    auto clean = synth_clean<T>(h, w, rng);
    const auto hp = random_haze<T>(h, w, rng);
    return SynthSample<T>{clean, apply_haze(clean, hp)};
}

// Shared spatial flips for augmentation (applied identically to both images).
template <class T>
Tensor<T> flip_image(const Tensor<T>& img, bool flip_h, bool flip_v) {
    if (!flip_h && !flip_v) return img;
    const int64_t C = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
    std::vector<T> out(static_cast<size_t>(C * h * w));
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const int64_t sy = flip_v ? h - 1 - y : y;
                const int64_t sx = flip_h ? w - 1 - x : x;
                out[static_cast<size_t>(c * h * w + y * w + x)] =
                    img.data()[c * h * w + sy * w + sx];
            }
    return Tensor<T>(img.shape(), std::move(out));
}

} // namespace tformer
