#pragma once

// Training-time augmentation: random flips, colour jitter and random
// greyscale, applied in place to one planar RGB sample in [0, 1].

#include "cbmaudit/common/seed.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cbmaudit::core {

struct AugmentConfig {
    bool enabled = true;
    double horizontal_flip = 0.5; ///< probabilities
    double vertical_flip = 0.5;
    double brightness = 0.2;
    double contrast = 0.2;
    double saturation = 0.2;
    double hue = 0.05; ///< fraction of a full hue turn
    double grayscale_probability = 0.1;
};

template <typename T>
void augment_sample(T* chw, std::size_t height, std::size_t width, const AugmentConfig& cfg, Rng& rng)
{
    if (!cfg.enabled) return;
    const std::size_t plane = height * width;
    T* r = chw;
    T* g = chw + plane;
    T* b = chw + 2 * plane;

    auto flip = [&](bool horizontal) {
        for (T* ch : {r, g, b}) {
            if (horizontal) {
                for (std::size_t y = 0; y < height; ++y) std::reverse(ch + y * width, ch + (y + 1) * width);
            } else {
                for (std::size_t y = 0; y < height / 2; ++y)
                    std::swap_ranges(ch + y * width, ch + (y + 1) * width, ch + (height - 1 - y) * width);
            }
        }
    };
    if (uniform01(rng) < cfg.horizontal_flip) flip(true);
    if (uniform01(rng) < cfg.vertical_flip) flip(false);

    const double bright = 1.0 + uniform(rng, -cfg.brightness, cfg.brightness);
    const double contrast = 1.0 + uniform(rng, -cfg.contrast, cfg.contrast);
    const double sat = 1.0 + uniform(rng, -cfg.saturation, cfg.saturation);
    const double hue = uniform(rng, -cfg.hue, cfg.hue) * 2.0 * std::numbers::pi;
    const bool gray = uniform01(rng) < cfg.grayscale_probability;

    auto luma = [](double rr, double gg, double bb) { return 0.299 * rr + 0.587 * gg + 0.114 * bb; };
    double mean = 0;
    for (std::size_t i = 0; i < plane; ++i) mean += luma(r[i], g[i], b[i]) * bright;
    mean /= static_cast<double>(plane);

    const double ch = std::cos(hue), sh = std::sin(hue);
    for (std::size_t i = 0; i < plane; ++i) {
        double rr = r[i] * bright, gg = g[i] * bright, bb = b[i] * bright;
        rr = mean + contrast * (rr - mean);
        gg = mean + contrast * (gg - mean);
        bb = mean + contrast * (bb - mean);
        const double l = luma(rr, gg, bb);
        rr = l + sat * (rr - l);
        gg = l + sat * (gg - l);
        bb = l + sat * (bb - l);
        // hue: rotate the chroma plane of YIQ
        const double y = 0.299 * rr + 0.587 * gg + 0.114 * bb;
        const double iq_i = 0.596 * rr - 0.274 * gg - 0.322 * bb;
        const double iq_q = 0.211 * rr - 0.523 * gg + 0.312 * bb;
        const double i2 = ch * iq_i - sh * iq_q, q2 = sh * iq_i + ch * iq_q;
        rr = y + 0.956 * i2 + 0.621 * q2;
        gg = y - 0.272 * i2 - 0.647 * q2;
        bb = y - 1.106 * i2 + 1.703 * q2;
        if (gray) rr = gg = bb = luma(rr, gg, bb);
        r[i] = static_cast<T>(std::clamp(rr, 0.0, 1.0));
        g[i] = static_cast<T>(std::clamp(gg, 0.0, 1.0));
        b[i] = static_cast<T>(std::clamp(bb, 0.0, 1.0));
    }
}

} // namespace cbmaudit::core
