#pragma once

// Flat binary checkpoint for model weights: 32-bit little-endian floats, each
// tensor preceded by its shape manifest entry. Layout:
//   magic "TFW1", u32 tensor count, then per tensor:
//   u32 name length, name bytes, u32 rank, i64 dims..., f32 values.
// Loading is strict: names, order, and shapes must match the model exactly.
// Models in either working precision read and write this format; double
// weights round through f32 on disk.

#include <cstring>
#include <fstream>

#include "tformer/backbone.hpp"

namespace tformer {

namespace detail {

template <class V>
void write_pod(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <class V>
V read_pod(std::istream& is, const std::string& what) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    check(bool(is), "checkpoint: truncated while reading " + what);
    return v;
}

} // namespace detail

template <class T>
void save_weights(const std::string& path, ModelWeights<Tensor<T>>& w) {
    std::ofstream os(path, std::ios::binary);
    check(bool(os), "checkpoint: cannot open for writing: " + path);
    uint32_t count = 0;
    w.visit("m", [&](const std::string&, Tensor<T>&) { ++count; });
    os.write("TFW1", 4);
    detail::write_pod(os, count);
    w.visit("m", [&](const std::string& name, Tensor<T>& t) {
        detail::write_pod(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod(os, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape()) detail::write_pod(os, d);
        for (int64_t i = 0; i < t.numel(); ++i)
            detail::write_pod(os, static_cast<float>(t.data()[i]));
    });
    check(bool(os), "checkpoint: write failed: " + path);
}

template <class T>
void load_weights(const std::string& path, ModelWeights<Tensor<T>>& w) {
    std::ifstream is(path, std::ios::binary);
    check(bool(is), "checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    check(bool(is) && std::memcmp(magic, "TFW1", 4) == 0, "checkpoint: bad magic in " + path);
    uint32_t expect = 0;
    w.visit("m", [&](const std::string&, Tensor<T>&) { ++expect; });
    const auto count = detail::read_pod<uint32_t>(is, "tensor count");
    check(count == expect, "checkpoint: holds " + std::to_string(count) + " tensors, model has " +
                               std::to_string(expect));
    w.visit("m", [&](const std::string& name, Tensor<T>& t) {
        const auto nlen = detail::read_pod<uint32_t>(is, "name length");
        std::string got(nlen, '\0');
        is.read(got.data(), nlen);
        check(bool(is) && got == name, "checkpoint: expected tensor '" + name + "', found '" + got + "'");
        const auto rank = detail::read_pod<uint32_t>(is, name + " rank");
        Shape s;
        for (uint32_t i = 0; i < rank; ++i) s.push_back(detail::read_pod<int64_t>(is, name + " dims"));
        check_shape_eq(s, t.shape(), ("checkpoint tensor " + name).c_str());
        std::vector<T> vals(static_cast<size_t>(t.numel()));
        for (auto& v : vals) v = static_cast<T>(detail::read_pod<float>(is, name + " data"));
        t = Tensor<T>(t.shape(), std::move(vals));
    });
}

} // namespace tformer
