#pragma once

// Binary 8-bit PPM (P6) image I/O. Images are [3,H,W] tensors in [0,1].

#include <fstream>

#include "tformer/tensor.hpp"

namespace tformer {

namespace detail {

inline int ppm_token(std::istream& is) {
    // Next integer token, skipping whitespace and '#' comments.
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (std::isspace(c)) {
            c = is.get();
        } else {
            break;
        }
    }
    check(c != EOF && std::isdigit(c), "ppm: malformed header");
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = is.get();
    }
    return v;
}

} // namespace detail

template <class T>
Tensor<T> load_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(bool(is), "ppm: cannot open " + path);
    char m0 = 0, m1 = 0;
    is.get(m0), is.get(m1);
    check(m0 == 'P' && m1 == '6', "ppm: not a P6 file: " + path);
    const int64_t w = detail::ppm_token(is);
    const int64_t h = detail::ppm_token(is);
    const int64_t maxv = detail::ppm_token(is);
    check(w > 0 && h > 0, "ppm: bad dimensions in " + path);
    check(maxv == 255, "ppm: only maxval 255 supported: " + path);
    std::vector<unsigned char> raw(static_cast<size_t>(3 * h * w));
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    check(bool(is), "ppm: truncated pixel data in " + path);
    std::vector<T> px(static_cast<size_t>(3 * h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                px[static_cast<size_t>(c * h * w + y * w + x)] =
                    static_cast<T>(raw[static_cast<size_t>((y * w + x) * 3 + c)]) / T(255);
    return Tensor<T>(Shape{3, h, w}, std::move(px));
}

template <class T>
void save_ppm(const std::string& path, const Tensor<T>& img) {
    check(img.rank() == 3 && img.shape()[0] == 3, "ppm: image must be [3,H,W]");
    const int64_t h = img.shape()[1], w = img.shape()[2];
    std::ofstream os(path, std::ios::binary);
    check(bool(os), "ppm: cannot open for writing " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> raw(static_cast<size_t>(3 * h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                double v = static_cast<double>(img.data()[c * h * w + y * w + x]);
                v = std::min(1.0, std::max(0.0, v));
                raw[static_cast<size_t>((y * w + x) * 3 + c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    check(bool(os), "ppm: write failed " + path);
}

} // namespace tformer
