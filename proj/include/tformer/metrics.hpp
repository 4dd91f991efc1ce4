#pragma once

// Full-reference image quality metrics on [C,H,W] tensors in [0,1]:
// PSNR = 10*log10(1/MSE), capped at 99 dB for identical images, and SSIM
// with the standard 11x11 Gaussian window (sigma 1.5), evaluated on the
// valid (unpadded) region and averaged over channels.

#include <cmath>

#include "tformer/tensor.hpp"

namespace tformer {

template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    check_shape_eq(a.shape(), b.shape(), "psnr");
    double mse = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 1e-12) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    check_shape_eq(a.shape(), b.shape(), "ssim");
    check(a.rank() == 3, "ssim: expects [C,H,W]");
    const int64_t C = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
    constexpr int64_t win = 11, rad = 5;
    check(h >= win && w >= win, "ssim: image smaller than the 11x11 window");
    double g[win];
    double gsum = 0;
    for (int64_t i = 0; i < win; ++i) {
        const double x = static_cast<double>(i - rad);
        g[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        gsum += g[i];
    }
    for (auto& v : g) v /= gsum;

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    int64_t count = 0;
    for (int64_t c = 0; c < C; ++c) {
        const T* pa = a.data() + c * h * w;
        const T* pb = b.data() + c * h * w;
        for (int64_t y = rad; y < h - rad; ++y)
            for (int64_t x = rad; x < w - rad; ++x) {
                double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
                for (int64_t dy = -rad; dy <= rad; ++dy)
                    for (int64_t dx = -rad; dx <= rad; ++dx) {
                        const double wgt = g[dy + rad] * g[dx + rad];
                        const double xa = static_cast<double>(pa[(y + dy) * w + (x + dx)]);
                        const double xb = static_cast<double>(pb[(y + dy) * w + (x + dx)]);
                        ma += wgt * xa;
                        mb += wgt * xb;
                        va += wgt * xa * xa;
                        vb += wgt * xb * xb;
                        cov += wgt * xa * xb;
                    }
                va -= ma * ma;
                vb -= mb * mb;
                cov -= ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    }
    return total / static_cast<double>(count);
}

} // namespace tformer
