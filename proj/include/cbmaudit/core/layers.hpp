#pragma once

// Layer specifications and the numeric kernels behind them. Kernels are free
// functions over explicit weights so that attribution rules can reuse them
// with modified (folded, sign-split) weights.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/core/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace cbmaudit::core {

struct Conv2d {
    std::size_t in = 1, out = 1, kernel = 3, stride = 1, pad = 1;
    bool bias = true;
};
struct BatchNorm2d {
    std::size_t channels = 1;
    double momentum = 0.1;
    double eps = 1e-5;
};
struct ReLU {};
struct MaxPool2d {
    std::size_t kernel = 2, stride = 2;
};
struct Flatten {};
struct Linear {
    std::size_t in = 1, out = 1;
    bool bias = true;
};
struct Sigmoid {};

using LayerSpec = std::variant<Conv2d, BatchNorm2d, ReLU, MaxPool2d, Flatten, Linear, Sigmoid>;

inline std::string layer_name(const LayerSpec& spec)
{
    static constexpr const char* names[] = {"Conv2d", "BatchNorm2d", "ReLU", "MaxPool2d", "Flatten", "Linear", "Sigmoid"};
    return names[spec.index()];
}

inline bool is_weighted(const LayerSpec& spec)
{
    return std::holds_alternative<Conv2d>(spec) || std::holds_alternative<Linear>(spec);
}

inline Shape output_shape(const LayerSpec& spec, const Shape& in)
{
    auto mismatch = [&](const std::string& why) {
        fail(ErrorKind::shape_mismatch, layer_name(spec) + " got input " + shape_string(in) + ": " + why);
    };
    return std::visit(
        [&](const auto& s) -> Shape {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Conv2d>) {
                if (in[1] != s.in) mismatch("expected " + std::to_string(s.in) + " channels");
                if (in[2] + 2 * s.pad < s.kernel || in[3] + 2 * s.pad < s.kernel) mismatch("input smaller than kernel");
                return {in[0], s.out, (in[2] + 2 * s.pad - s.kernel) / s.stride + 1,
                        (in[3] + 2 * s.pad - s.kernel) / s.stride + 1};
            } else if constexpr (std::is_same_v<S, BatchNorm2d>) {
                if (in[1] != s.channels) mismatch("expected " + std::to_string(s.channels) + " channels");
                return in;
            } else if constexpr (std::is_same_v<S, MaxPool2d>) {
                if (in[2] < s.kernel || in[3] < s.kernel) mismatch("input smaller than pool window");
                return {in[0], in[1], (in[2] - s.kernel) / s.stride + 1, (in[3] - s.kernel) / s.stride + 1};
            } else if constexpr (std::is_same_v<S, Flatten>) {
                return {in[0], in[1] * in[2] * in[3], 1, 1};
            } else if constexpr (std::is_same_v<S, Linear>) {
                if (in[1] * in[2] * in[3] != s.in) mismatch("expected " + std::to_string(s.in) + " features");
                return {in[0], s.out, 1, 1};
            } else {
                return in;
            }
        },
        spec);
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// ---------------------------------------------------------------------------
// Convolution (cross-correlation) via im2col

namespace detail {

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, const Conv2d& s, std::size_t oh,
            std::size_t ow, T* col)
{
    const std::size_t k = s.kernel;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = col + ((c * k + ky) * k + kx) * oh * ow;
                // output columns whose input column lies inside the image
                const long off = static_cast<long>(kx) - static_cast<long>(s.pad);
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.pad);
                    T* dst = row + oy * ow;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = x + (c * h + static_cast<std::size_t>(iy)) * w;
                    if (s.stride == 1) {
                        const long lo = std::max(0L, -off), hi = std::min(static_cast<long>(ow), static_cast<long>(w) - off);
                        std::fill(dst, dst + std::max(0L, lo), T(0));
                        if (hi > lo) std::copy(src + lo + off, src + hi + off, dst + lo);
                        std::fill(dst + std::max(lo, hi), dst + ow, T(0));
                        continue;
                    }
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * s.stride) + off;
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? T(0) : src[ix];
                    }
                }
            }
}

template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w, const Conv2d& s, std::size_t oh,
            std::size_t ow, T* x)
{
    const std::size_t k = s.kernel;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = col + ((c * k + ky) * k + kx) * oh * ow;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    T* dst = x + (c * h + static_cast<std::size_t>(iy)) * w;
                    const T* src = row + oy * ow;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.pad);
                        if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
                    }
                }
            }
}

} // namespace detail

/// weight is (out, in, k, k) row-major; bias may be null.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const T* weight, const T* bias, const Conv2d& s)
{
    const Shape os = output_shape(s, x.shape());
    Tensor<T> y(os);
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = os[2], ow = os[3], ckk = c * s.kernel * s.kernel;
    std::vector<T> col(ckk * oh * ow);
    ConstMatrixMap<T> wm(weight, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(ckk));
    for (std::size_t b = 0; b < n; ++b) {
        detail::im2col(x.data() + b * x.stride(), c, h, w, s, oh, ow, col.data());
        ConstMatrixMap<T> cm(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(oh * ow));
        MatrixMap<T> ym(y.data() + b * y.stride(), static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(oh * ow));
        ym.noalias() = wm * cm;
        if (bias)
            for (std::size_t o = 0; o < s.out; ++o) ym.row(static_cast<Eigen::Index>(o)).array() += bias[o];
    }
    return y;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const T* weight, const Conv2d& s, const Shape& in_shape)
{
    Tensor<T> gx(in_shape);
    const std::size_t n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
    const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3), ckk = c * s.kernel * s.kernel;
    std::vector<T> col(ckk * oh * ow);
    ConstMatrixMap<T> wm(weight, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(ckk));
    for (std::size_t b = 0; b < n; ++b) {
        ConstMatrixMap<T> gm(grad_out.data() + b * grad_out.stride(), static_cast<Eigen::Index>(s.out),
                             static_cast<Eigen::Index>(oh * ow));
        MatrixMap<T> cm(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(oh * ow));
        cm.noalias() = wm.transpose() * gm;
        detail::col2im(col.data(), c, h, w, s, oh, ow, gx.data() + b * gx.stride());
    }
    return gx;
}

/// Accumulates dL/dW and dL/db (db may be null).
template <typename T>
void conv2d_backward_params(const Tensor<T>& x, const Tensor<T>& grad_out, const Conv2d& s, T* grad_weight, T* grad_bias)
{
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3), ckk = c * s.kernel * s.kernel;
    std::vector<T> col(ckk * oh * ow);
    MatrixMap<T> gw(grad_weight, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(ckk));
    for (std::size_t b = 0; b < n; ++b) {
        detail::im2col(x.data() + b * x.stride(), c, h, w, s, oh, ow, col.data());
        ConstMatrixMap<T> cm(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(oh * ow));
        ConstMatrixMap<T> gm(grad_out.data() + b * grad_out.stride(), static_cast<Eigen::Index>(s.out),
                             static_cast<Eigen::Index>(oh * ow));
        gw.noalias() += gm * cm.transpose();
        if (grad_bias)
            for (std::size_t o = 0; o < s.out; ++o) {
                // sequential sum: Eigen's vectorized reduction order depends on buffer alignment
                const T* row = grad_out.data() + b * grad_out.stride() + o * oh * ow;
                grad_bias[o] += std::accumulate(row, row + oh * ow, T(0));
            }
    }
}

// ---------------------------------------------------------------------------
// Linear: y = x W^T + b, weight is (out, in)

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const T* weight, const T* bias, const Linear& s)
{
    const Shape os = output_shape(s, x.shape());
    Tensor<T> y(os);
    const auto n = static_cast<Eigen::Index>(x.dim(0));
    ConstMatrixMap<T> xm(x.data(), n, static_cast<Eigen::Index>(s.in));
    ConstMatrixMap<T> wm(weight, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(s.in));
    MatrixMap<T> ym(y.data(), n, static_cast<Eigen::Index>(s.out));
    ym.noalias() = xm * wm.transpose();
    if (bias)
        for (Eigen::Index r = 0; r < n; ++r)
            for (std::size_t o = 0; o < s.out; ++o) ym(r, static_cast<Eigen::Index>(o)) += bias[o];
    return y;
}

template <typename T>
Tensor<T> linear_backward_input(const Tensor<T>& grad_out, const T* weight, const Linear& s, const Shape& in_shape)
{
    Tensor<T> gx(in_shape);
    const auto n = static_cast<Eigen::Index>(in_shape[0]);
    ConstMatrixMap<T> gm(grad_out.data(), n, static_cast<Eigen::Index>(s.out));
    ConstMatrixMap<T> wm(weight, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(s.in));
    MatrixMap<T> xm(gx.data(), n, static_cast<Eigen::Index>(s.in));
    xm.noalias() = gm * wm;
    return gx;
}

template <typename T>
void linear_backward_params(const Tensor<T>& x, const Tensor<T>& grad_out, const Linear& s, T* grad_weight, T* grad_bias)
{
    const auto n = static_cast<Eigen::Index>(x.dim(0));
    ConstMatrixMap<T> xm(x.data(), n, static_cast<Eigen::Index>(s.in));
    ConstMatrixMap<T> gm(grad_out.data(), n, static_cast<Eigen::Index>(s.out));
    MatrixMap<T> gw(grad_weight, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(s.in));
    gw.noalias() += gm.transpose() * xm;
    if (grad_bias)
        for (Eigen::Index r = 0; r < n; ++r)
            for (std::size_t o = 0; o < s.out; ++o) grad_bias[o] += gm(r, static_cast<Eigen::Index>(o));
}

// ---------------------------------------------------------------------------
// Max pooling; indices hold the flat input offset of each window's winner.

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, const MaxPool2d& s, std::vector<std::uint32_t>& winners)
{
    const Shape os = output_shape(s, x.shape());
    Tensor<T> y(os);
    winners.assign(y.size(), 0);
    const std::size_t ih = x.dim(2), iw = x.dim(3), planes = os[0] * os[1];
    std::size_t o = 0;
    for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t base = p * ih * iw;
        const T* plane = x.data() + base;
        for (std::size_t oy = 0; oy < os[2]; ++oy)
            for (std::size_t ox = 0; ox < os[3]; ++ox, ++o) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t arg = 0;
                for (std::size_t ky = 0; ky < s.kernel; ++ky) {
                    const std::size_t row = (oy * s.stride + ky) * iw + ox * s.stride;
                    for (std::size_t kx = 0; kx < s.kernel; ++kx)
                        if (plane[row + kx] > best) {
                            best = plane[row + kx];
                            arg = row + kx;
                        }
                }
                y[o] = best;
                winners[o] = static_cast<std::uint32_t>(base + arg);
            }
    }
    return y;
}

/// Routes each output value to its window winner.
template <typename T>
Tensor<T> maxpool_route(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& winners, const Shape& in_shape)
{
    Tensor<T> gx(in_shape);
    for (std::size_t o = 0; o < grad_out.size(); ++o) gx[winners[o]] += grad_out[o];
    return gx;
}

} // namespace cbmaudit::core
