#pragma once

#include "cbmaudit/common/error.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cbmaudit::core {

/// (batch, channels, height, width). Dense vectors use (batch, features, 1, 1).
using Shape = std::array<std::size_t, 4>;

inline std::size_t shape_size(const Shape& s) { return s[0] * s[1] * s[2] * s[3]; }

inline std::string shape_string(const Shape& s)
{
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
           std::to_string(s[3]) + ")";
}

/// Dense NCHW tensor.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(shape)
        , data_(shape_size(shape), fill)
    {
    }
    Tensor(Shape shape, std::vector<T> data)
        : shape_(shape)
        , data_(std::move(data))
    {
        require(data_.size() == shape_size(shape_), ErrorKind::shape_mismatch,
                "tensor data does not match shape " + shape_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t i) const noexcept { return shape_[i]; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Elements per batch entry.
    std::size_t stride() const noexcept { return shape_[1] * shape_[2] * shape_[3]; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept
    {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept
    {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    std::span<T> sample(std::size_t n) noexcept { return {data_.data() + n * stride(), stride()}; }
    std::span<const T> sample(std::size_t n) const noexcept { return {data_.data() + n * stride(), stride()}; }

    /// Same data, new shape of equal size.
    Tensor reshaped(Shape s) const
    {
        require(shape_size(s) == size(), ErrorKind::shape_mismatch,
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
        return Tensor(s, data_);
    }

    void fill(T v)
    {
        for (auto& x : data_) x = v;
    }

    bool all_finite() const noexcept
    {
        for (const auto& x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const
    {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

} // namespace cbmaudit::core
