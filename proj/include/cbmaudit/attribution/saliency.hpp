#pragma once

// Signed saliency overlays: red for positive relevance, blue for negative,
// blended over a grayscale copy of the input.

#include "cbmaudit/attribution/map.hpp"
#include "cbmaudit/scene/image.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace cbmaudit::attribution {

struct SaliencyStyle {
    double percentile = 99.0;
    double max_alpha = 0.85;
};

/// Nearest-rank percentile of |v|.
inline double abs_percentile(const std::vector<double>& v, double pct)
{
    if (v.empty()) return 0.0;
    std::vector<double> a(v.size());
    std::transform(v.begin(), v.end(), a.begin(), [](double x) { return std::abs(x); });
    std::sort(a.begin(), a.end());
    const double rank = std::ceil(pct / 100.0 * static_cast<double>(a.size()));
    const auto idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(a.size()))) - 1;
    return a[idx];
}

inline scene::RgbImage saliency_overlay(const AttributionMap& map, const scene::RgbImage& image,
                                        const SaliencyStyle& style = {})
{
    require(static_cast<std::size_t>(image.width) == map.width && static_cast<std::size_t>(image.height) == map.height,
            ErrorKind::shape_mismatch, "saliency map and image sizes differ");
    const auto r = map.summed();
    double scale = abs_percentile(r, style.percentile);
    if (scale <= 0) scale = abs_percentile(r, 100.0);
    scene::RgbImage out = image;
    for (std::size_t p = 0; p < r.size(); ++p) {
        const auto* px = &image.pixels[p * 3];
        const double gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        const double a = scale > 0 ? std::min(1.0, std::abs(r[p]) / scale) * style.max_alpha : 0.0;
        const double hot = r[p] > 0 ? 255.0 : 0.0, cold = r[p] < 0 ? 255.0 : 0.0;
        const double red = (1 - a) * gray + a * hot;
        const double green = (1 - a) * gray;
        const double blue = (1 - a) * gray + a * cold;
        out.pixels[p * 3 + 0] = static_cast<std::uint8_t>(std::lround(std::clamp(red, 0.0, 255.0)));
        out.pixels[p * 3 + 1] = static_cast<std::uint8_t>(std::lround(std::clamp(green, 0.0, 255.0)));
        out.pixels[p * 3 + 2] = static_cast<std::uint8_t>(std::lround(std::clamp(blue, 0.0, 255.0)));
    }
    return out;
}

inline void render_saliency(const AttributionMap& map, const scene::RgbImage& image, const std::filesystem::path& path,
                            const SaliencyStyle& style = {})
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    scene::write_png(path, saliency_overlay(map, image, style));
}

inline std::string saliency_filename(const std::string& sample_id, std::size_t concept_id, const std::string& method)
{
    return sample_id + "_" + std::to_string(concept_id) + "_" + method + ".png";
}

/// Tiles equally sized images into a grid, `columns` wide.
inline scene::RgbImage contact_sheet(const std::vector<scene::RgbImage>& tiles, int columns, int gap = 2)
{
    require(!tiles.empty() && columns > 0, ErrorKind::invalid_argument, "empty contact sheet");
    const int w = tiles[0].width, h = tiles[0].height;
    const int n = static_cast<int>(tiles.size()), rows = (n + columns - 1) / columns;
    scene::RgbImage sheet;
    sheet.width = columns * w + (columns + 1) * gap;
    sheet.height = rows * h + (rows + 1) * gap;
    sheet.pixels.assign(static_cast<std::size_t>(sheet.width) * sheet.height * 3, 255);
    for (int t = 0; t < n; ++t) {
        require(tiles[t].width == w && tiles[t].height == h, ErrorKind::shape_mismatch, "contact sheet tiles differ in size");
        const int ox = gap + (t % columns) * (w + gap), oy = gap + (t / columns) * (h + gap);
        for (int y = 0; y < h; ++y)
            std::copy_n(&tiles[t].pixels[static_cast<std::size_t>(y) * w * 3], w * 3,
                        &sheet.pixels[(static_cast<std::size_t>(oy + y) * sheet.width + ox) * 3]);
    }
    return sheet;
}

} // namespace cbmaudit::attribution
