#pragma once

// Gradient-based attributions: integrated gradients, the noise tunnel around
// any base method, and Grad-CAM.

#include "cbmaudit/attribution/map.hpp"
#include "cbmaudit/common/seed.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cbmaudit::attribution {

/// d(score of `target`)/d(input) for every entry of a batch.
template <typename T>
core::Tensor<T> score_gradient(const core::Network<T>& net, const core::Tensor<T>& x, std::size_t target)
{
    const std::size_t score = score_layer_of(net);
    const auto tape = net.forward_range(x, core::Mode::eval, 0, score + 1);
    const auto& out = tape.output(score);
    require(target < out.stride(), ErrorKind::invalid_argument, "target index out of range");
    core::Tensor<T> g(out.shape());
    for (std::size_t n = 0; n < out.dim(0); ++n) g[n * out.stride() + target] = T(1);
    return net.backward(tape, std::move(g), score + 1, 0);
}

template <typename T>
T target_score(const core::Network<T>& net, const core::Tensor<T>& x, std::size_t target)
{
    const std::size_t score = score_layer_of(net);
    const auto tape = net.forward_range(x, core::Mode::eval, 0, score + 1);
    return tape.output(score)[target];
}

struct IgConfig {
    std::size_t steps = 64;
    std::size_t chunk = 16; ///< path points evaluated per forward pass
};

/// Right Riemann sum along the straight path from `baseline` to the single image `x`.
/// An empty baseline means the all-zeros image.
template <typename T>
AttributionMap integrated_gradients(const core::Network<T>& net, const core::Tensor<T>& x, std::size_t target,
                                    const core::Tensor<T>& baseline = {}, IgConfig cfg = {})
{
    require(cfg.steps >= 1, ErrorKind::invalid_argument, "integrated gradients needs at least one step");
    require(x.dim(0) == 1, ErrorKind::shape_mismatch, "integrated gradients takes a single input");
    const core::Tensor<T> base = baseline.empty() ? core::Tensor<T>(x.shape()) : baseline;
    require(base.shape() == x.shape(), ErrorKind::shape_mismatch,
            "baseline " + core::shape_string(base.shape()) + " does not match input " + core::shape_string(x.shape()));
    const std::size_t per = x.size(), chunk = std::max<std::size_t>(1, cfg.chunk);
    std::vector<double> acc(per, 0.0);
    for (std::size_t t0 = 1; t0 <= cfg.steps; t0 += chunk) {
        const std::size_t m = std::min(chunk, cfg.steps - t0 + 1);
        core::Tensor<T> path(core::Shape{m, x.dim(1), x.dim(2), x.dim(3)});
        for (std::size_t j = 0; j < m; ++j) {
            const double a = static_cast<double>(t0 + j) / static_cast<double>(cfg.steps);
            for (std::size_t i = 0; i < per; ++i) path[j * per + i] = static_cast<T>(base[i] + a * (x[i] - base[i]));
        }
        const auto g = score_gradient(net, path, target);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t i = 0; i < per; ++i) acc[i] += g[j * per + i];
    }
    AttributionMap map{x.dim(1), x.dim(2), x.dim(3), std::vector<double>(per), static_cast<int>(target), "ig"};
    for (std::size_t i = 0; i < per; ++i)
        map.values[i] = (static_cast<double>(x[i]) - base[i]) * acc[i] / static_cast<double>(cfg.steps);
    require(map.all_finite(), ErrorKind::divergence, "non-finite integrated gradients");
    return map;
}

enum class TunnelMode { smoothgrad, smoothgrad_squared };

inline std::string tunnel_mode_name(TunnelMode m) { return m == TunnelMode::smoothgrad ? "smoothgrad" : "smoothgrad_sq"; }

struct NoiseTunnelConfig {
    std::size_t samples = 25;
    double stddev = 0.0; ///< in [0, 1] pixel units
    TunnelMode mode = TunnelMode::smoothgrad;
};

template <typename T>
using BaseMethod = std::function<AttributionMap(const core::Tensor<T>&)>;

/// Mean (or mean square) of the base attribution over Gaussian-perturbed copies of x.
template <typename T>
AttributionMap noise_tunnel(const BaseMethod<T>& base, const core::Tensor<T>& x, const NoiseTunnelConfig& cfg, Rng& rng)
{
    require(cfg.samples >= 1, ErrorKind::invalid_argument, "noise tunnel needs at least one sample");
    require(cfg.stddev >= 0, ErrorKind::invalid_argument, "noise standard deviation must be non-negative");
    std::normal_distribution<double> noise(0.0, 1.0);
    AttributionMap out;
    std::vector<double> acc;
    for (std::size_t s = 0; s < cfg.samples; ++s) {
        core::Tensor<T> xs = x;
        if (cfg.stddev > 0)
            for (auto& v : xs.values()) v = static_cast<T>(v + cfg.stddev * noise(rng));
        AttributionMap m = base(xs);
        if (s == 0) {
            out = m;
            acc.assign(m.values.size(), 0.0);
        }
        require(m.values.size() == acc.size(), ErrorKind::shape_mismatch, "base attribution changed shape");
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] += cfg.mode == TunnelMode::smoothgrad ? m.values[i] : m.values[i] * m.values[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = acc[i] / static_cast<double>(cfg.samples);
    out.method += "+" + tunnel_mode_name(cfg.mode);
    return out;
}

/// Last Conv2d layer before `end`.
template <typename T>
std::optional<std::size_t> last_conv(const core::Network<T>& net, std::size_t end)
{
    for (std::size_t i = end; i-- > 0;)
        if (std::holds_alternative<core::Conv2d>(net.spec(i))) return i;
    return std::nullopt;
}

/// Bilinear resize of an h x w grid (half-pixel centres, edge clamped).
inline std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t h, std::size_t w, std::size_t oh,
                                           std::size_t ow)
{
    std::vector<double> out(oh * ow);
    const double sy = static_cast<double>(h) / static_cast<double>(oh), sx = static_cast<double>(w) / static_cast<double>(ow);
    for (std::size_t y = 0; y < oh; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < ow; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double tx = fx - static_cast<double>(x0);
            const double top = src[y0 * w + x0] * (1 - tx) + src[y0 * w + x1] * tx;
            const double bot = src[y1 * w + x0] * (1 - tx) + src[y1 * w + x1] * tx;
            out[y * ow + x] = top * (1 - ty) + bot * ty;
        }
    }
    return out;
}

/// Channel weights are spatial means of the score gradient at the selected
/// layer's output; the map is ReLU(sum_c w_c A_c) upsampled to the input size.
inline std::vector<double> grad_cam_combine(const std::vector<double>& activations, const std::vector<double>& gradients,
                                            std::size_t channels, std::size_t h, std::size_t w)
{
    const std::size_t hw = h * w;
    std::vector<double> cam(hw, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        double weight = 0;
        for (std::size_t p = 0; p < hw; ++p) weight += gradients[c * hw + p];
        weight /= static_cast<double>(hw);
        for (std::size_t p = 0; p < hw; ++p) cam[p] += weight * activations[c * hw + p];
    }
    for (auto& v : cam) v = std::max(v, 0.0);
    return cam;
}

/// Grad-CAM on a single image; `layer` defaults to the last convolution.
template <typename T>
AttributionMap grad_cam(const core::Network<T>& net, const core::Tensor<T>& x, std::size_t target,
                        std::optional<std::size_t> layer = std::nullopt)
{
    require(x.dim(0) == 1, ErrorKind::shape_mismatch, "grad_cam takes a single input");
    const std::size_t score = score_layer_of(net);
    if (!layer) layer = last_conv(net, score);
    require(layer.has_value() && *layer < score && std::holds_alternative<core::Conv2d>(net.spec(*layer)),
            ErrorKind::invalid_argument, "grad_cam layer must be a convolution below the score layer");
    const auto tape = net.forward_range(x, core::Mode::eval, 0, score + 1);
    const auto& out = tape.output(score);
    require(target < out.stride(), ErrorKind::invalid_argument, "target index out of range");
    core::Tensor<T> g(out.shape());
    g[target] = T(1);
    const auto ga = net.backward(tape, std::move(g), score + 1, *layer + 1);
    const auto& a = tape.output(*layer);
    std::vector<double> av(a.values().begin(), a.values().end()), gv(ga.values().begin(), ga.values().end());
    const auto cam = grad_cam_combine(av, gv, a.dim(1), a.dim(2), a.dim(3));
    AttributionMap map{1, x.dim(2), x.dim(3), resize_bilinear(cam, a.dim(2), a.dim(3), x.dim(2), x.dim(3)),
                       static_cast<int>(target), "gradcam"};
    return map;
}

} // namespace cbmaudit::attribution
