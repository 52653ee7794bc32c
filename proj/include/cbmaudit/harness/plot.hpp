#pragma once

// Minimal raster plots. The data behind every plot is written separately as
// CSV; these images are a convenience for the report.

#include "cbmaudit/metrics/ois.hpp"
#include "cbmaudit/scene/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <vector>

namespace cbmaudit::harness {

struct Series {
    std::vector<std::pair<double, double>> points; ///< in [0,1] x [0,1]
    std::array<std::uint8_t, 3> color{31, 119, 180};
};

namespace detail {

inline void fill_rect(scene::RgbImage& img, int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c)
{
    x0 = std::max(x0, 0), y0 = std::max(y0, 0);
    x1 = std::min(x1, img.width), y1 = std::min(y1, img.height);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) std::copy(c.begin(), c.end(), img.at(x, y));
}

/// Piecewise-linear approximation of viridis.
inline std::array<std::uint8_t, 3> viridis(double t)
{
    static constexpr std::array<std::array<double, 3>, 5> stops{
        {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
    t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(t), stops.size() - 2);
    const double f = t - static_cast<double>(i);
    std::array<std::uint8_t, 3> out{};
    for (std::size_t c = 0; c < 3; ++c)
        out[c] = static_cast<std::uint8_t>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
    return out;
}

} // namespace detail

/// Unit-square scatter with quarter gridlines; x grows right, y grows up.
inline scene::RgbImage scatter_plot(const std::vector<Series>& series, int size = 320)
{
    const int margin = 16, inner = size - 2 * margin;
    scene::RgbImage img(size, size);
    std::fill(img.pixels.begin(), img.pixels.end(), std::uint8_t{255});
    for (int q = 0; q <= 4; ++q) {
        const int off = margin + q * (inner - 1) / 4;
        const std::array<std::uint8_t, 3> c = (q == 0) ? std::array<std::uint8_t, 3>{0, 0, 0}
                                                       : std::array<std::uint8_t, 3>{220, 220, 220};
        detail::fill_rect(img, margin, size - 1 - off, margin + inner, size - off, c); // horizontal
        detail::fill_rect(img, off, margin, off + 1, margin + inner, c);               // vertical
    }
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            const int px = margin + static_cast<int>(std::lround(std::clamp(x, 0.0, 1.0) * (inner - 1)));
            const int py = size - 1 - margin - static_cast<int>(std::lround(std::clamp(y, 0.0, 1.0) * (inner - 1)));
            detail::fill_rect(img, px - 2, py - 2, px + 3, py + 3, s.color);
        }
    return img;
}

/// One cell per matrix entry, AUC 0.5..1 mapped onto the colour scale; undefined cells grey.
inline scene::RgbImage heatmap(const metrics::AucMatrix& m, int cell = 6)
{
    const int n = static_cast<int>(m.k);
    scene::RgbImage img(n * cell, n * cell);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const auto& v = m.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
            const auto c = v ? detail::viridis((*v - 0.5) * 2.0) : std::array<std::uint8_t, 3>{160, 160, 160};
            detail::fill_rect(img, j * cell, i * cell, (j + 1) * cell, (i + 1) * cell, c);
        }
    return img;
}

} // namespace cbmaudit::harness
