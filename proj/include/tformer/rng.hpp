#pragma once

#include <random>

#include "tformer/tensor.hpp"

namespace tformer {

// Derive an independent stream from (seed, stream); avoids correlated
// sequences when many objects draw from one master seed.
inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream = 0) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32),
                      0x9e3779b9u};
    return std::mt19937_64(seq);
}

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), the default weight init.
template <class T>
Tensor<T> init_uniform(Shape shape, int64_t fan_in, std::mt19937_64& rng) {
    const T b = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    return Tensor<T>::uniform(std::move(shape), -b, b, rng);
}

} // namespace tformer
