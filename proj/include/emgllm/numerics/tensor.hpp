// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "emgllm/error.hpp"

namespace emgllm::numerics {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) {
            throw ContractError("negative dimension in shape");
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major tensor with value semantics.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_size(shape_)) {
            throw ContractError("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor matrix(int rows, int cols, T fill = T(0)) { return Tensor({rows, cols}, fill); }

    static Tensor vector(std::vector<T> values) {
        const int n = static_cast<int>(values.size());
        return Tensor({n}, std::move(values));
    }

    static Tensor scalar(T value) { return Tensor({1}, std::vector<T>{value}); }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Rank-2 helpers; a rank-1 tensor is treated as a single row.
    int rows() const noexcept { return rank() >= 2 ? shape_[0] : 1; }
    int cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(int r, int c) noexcept { return data_[static_cast<std::size_t>(r) * cols() + c]; }
    const T& at(int r, int c) const noexcept {
        return data_[static_cast<std::size_t>(r) * cols() + c];
    }

    std::span<T> row(int r) noexcept {
        return std::span<T>(data_).subspan(static_cast<std::size_t>(r) * cols(), cols());
    }
    std::span<const T> row(int r) const noexcept {
        return std::span<const T>(data_).subspan(static_cast<std::size_t>(r) * cols(), cols());
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    void reshape(Shape shape) {
        if (shape_size(shape) != data_.size()) {
            throw ContractError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        shape_ = std::move(shape);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

   private:
    Shape shape_;
    std::vector<T> data_;
};

}  // namespace emgllm::numerics
