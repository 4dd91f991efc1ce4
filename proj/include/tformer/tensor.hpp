#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "tformer/shape.hpp"

namespace tformer {

// Immutable dense value. Copies share the underlying buffer; all operations
// build fresh buffers, so a Tensor observed by the tape never changes.
template <class T>
class Tensor {
  public:
    Tensor() : shape_{0}, data_(std::make_shared<std::vector<T>>()) {}

    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(data))) {
        check(static_cast<int64_t>(data_->size()) == tformer::numel(shape_),
              "Tensor: data size does not match shape " + shape_str(shape_));
    }

    // Reshape view: shares the buffer.
    Tensor(Shape shape, std::shared_ptr<std::vector<T>> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check(static_cast<int64_t>(data_->size()) == tformer::numel(shape_),
              "Tensor: buffer size does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) {
        std::vector<T> d(static_cast<size_t>(tformer::numel(shape)), T(0));
        return Tensor(std::move(shape), std::move(d));
    }
    static Tensor full(Shape shape, T v) {
        std::vector<T> d(static_cast<size_t>(tformer::numel(shape)), v);
        return Tensor(std::move(shape), std::move(d));
    }
    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    static Tensor uniform(Shape shape, T lo, T hi, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        std::vector<T> d(static_cast<size_t>(tformer::numel(shape)));
        for (auto& x : d) x = static_cast<T>(dist(rng));
        return Tensor(std::move(shape), std::move(d));
    }

    const Shape& shape() const { return shape_; }
    int64_t numel() const { return static_cast<int64_t>(data_->size()); }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }

    const T* data() const { return data_->data(); }
    const std::vector<T>& vec() const { return *data_; }
    std::shared_ptr<std::vector<T>> buffer() const { return data_; }

    T operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

    Tensor reshape(Shape s) const { return Tensor(std::move(s), data_); }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> d(data_->size());
        for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>((*data_)[i]);
        return Tensor<U>(shape_, std::move(d));
    }

    T max_abs() const {
        T m = 0;
        for (T v : *data_) m = std::max(m, std::abs(v));
        return m;
    }

  private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
};

} // namespace tformer
