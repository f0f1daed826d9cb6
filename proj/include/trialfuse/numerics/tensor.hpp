// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/random.hpp"

namespace trialfuse {

using Shape = std::vector<std::size_t>;

[[nodiscard]] inline std::string shape_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

[[nodiscard]] inline std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array. Value type: copies are deep.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_size(shape_), fill)
    {
        check_shape();
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        check_shape();
        if (data_.size() != shape_size(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size())
                                 + " does not match shape " + shape_string(shape_));
        }
    }

    /// Row-major matrix from nested braces: `Tensor<double>::matrix({{1, 2}, {3, 4}})`.
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows)
    {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<T> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) {
                throw DimensionError("ragged matrix literal");
            }
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor row(std::vector<T> values)
    {
        const std::size_t n = values.size();
        return Tensor({1, n}, std::move(values));
    }

    static Tensor scalar(T value) { return Tensor({1}, std::vector<T>{value}); }

    static Tensor full(Shape shape, T value)
    {
        Tensor out(std::move(shape));
        out.fill(value);
        return out;
    }

    static Tensor identity(std::size_t n)
    {
        Tensor out({n, n});
        for (std::size_t i = 0; i < n; ++i) {
            out(i, i) = T{1};
        }
        return out;
    }

    static Tensor normal(Shape shape, Rng& rng, double stddev = 1.0)
    {
        Tensor out(std::move(shape));
        for (auto& v : out.data_) {
            v = static_cast<T>(rng.normal(0.0, stddev));
        }
        return out;
    }

    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi)
    {
        Tensor out(std::move(shape));
        for (auto& v : out.data_) {
            v = static_cast<T>(rng.uniform(lo, hi));
        }
        return out;
    }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const
    {
        std::vector<U> data(data_.size());
        std::transform(data_.begin(), data_.end(), data.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(data));
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
    [[nodiscard]] std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
    [[nodiscard]] std::size_t cols() const noexcept
    {
        return shape_.size() < 2 ? 1 : shape_size(Shape(shape_.begin() + 1, shape_.end()));
    }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    [[nodiscard]] std::span<T> row_span(std::size_t r) noexcept
    {
        const std::size_t c = cols();
        return std::span<T>(data_).subspan(r * c, c);
    }
    [[nodiscard]] std::span<const T> row_span(std::size_t r) const noexcept
    {
        const std::size_t c = cols();
        return std::span<const T>(data_).subspan(r * c, c);
    }

    void fill(T value) noexcept { std::fill(data_.begin(), data_.end(), value); }

    [[nodiscard]] bool all_finite() const noexcept
    {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    /// Bitwise equality of shape and contents.
    friend bool operator==(const Tensor& a, const Tensor& b)
    {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_shape() const
    {
        for (const auto d : shape_) {
            if (d == 0) {
                throw DimensionError("tensor shape " + shape_string(shape_) + " has a zero dimension");
            }
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
[[nodiscard]] double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.shape() != b.shape()) {
        throw DimensionError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return worst;
}

} // namespace trialfuse
