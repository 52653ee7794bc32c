#pragma once

// Procedural card scenes: three vector-style cards laid left to right over a
// value-noise background, with an exact per-card footprint mask.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/common/seed.hpp"
#include "cbmaudit/scene/cards.hpp"
#include "cbmaudit/scene/image.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

namespace cbmaudit::scene {

/// Card height over card width.
constexpr double card_aspect = 1.4;

struct CardPlacement {
    double cx = 0;           ///< center, pixels
    double cy = 0;
    double scale = 0.25;     ///< card width as a fraction of the image width
    double rotation_deg = 0; ///< counter-clockwise on screen
};

struct SceneSpec {
    std::array<CardPlacement, 3> cards{};
    std::uint64_t background_seed = 0;
    int image_size = 96;
    std::uint64_t seed = 0;
    bool allow_overlap = false;
};

struct SceneRender {
    RgbImage image;
    std::array<Mask, 3> masks;
};

struct LayoutOptions {
    double min_scale = 0.22;
    double max_scale = 0.27;
    double max_rotation_deg = 15.0;
    bool allow_overlap = false;
};

namespace detail {

struct Vec2 {
    double x, y;
};

inline std::array<Vec2, 4> card_corners(const CardPlacement& p, int image_size)
{
    const double w = p.scale * image_size;
    const double h = w * card_aspect;
    const double th = p.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    std::array<Vec2, 4> out{};
    const std::array<Vec2, 4> local{{{-w / 2, -h / 2}, {w / 2, -h / 2}, {w / 2, h / 2}, {-w / 2, h / 2}}};
    for (std::size_t i = 0; i < 4; ++i) {
        // screen y grows downward; a positive angle turns the card counter-clockwise on screen
        out[i] = {p.cx + c * local[i].x + s * local[i].y, p.cy - s * local[i].x + c * local[i].y};
    }
    return out;
}

/// Card-local coordinates in units of card width: u in [-0.5, 0.5], v in [-0.7, 0.7].
inline Vec2 to_card_local(const CardPlacement& p, int image_size, double x, double y)
{
    const double w = p.scale * image_size;
    const double th = p.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double dx = x - p.cx, dy = y - p.cy;
    return {(c * dx - s * dy) / w, (s * dx + c * dy) / w};
}

inline bool polygons_separated(const std::array<Vec2, 4>& a, const std::array<Vec2, 4>& b)
{
    auto separated_on_axes = [](const std::array<Vec2, 4>& p, const std::array<Vec2, 4>& q) {
        for (std::size_t i = 0; i < 4; ++i) {
            const Vec2 e{p[(i + 1) % 4].x - p[i].x, p[(i + 1) % 4].y - p[i].y};
            const Vec2 n{-e.y, e.x};
            double pmin = 1e300, pmax = -1e300, qmin = 1e300, qmax = -1e300;
            for (const auto& v : p) {
                double d = v.x * n.x + v.y * n.y;
                pmin = std::min(pmin, d);
                pmax = std::max(pmax, d);
            }
            for (const auto& v : q) {
                double d = v.x * n.x + v.y * n.y;
                qmin = std::min(qmin, d);
                qmax = std::max(qmax, d);
            }
            if (pmax < qmin || qmax < pmin) return true;
        }
        return false;
    };
    return separated_on_axes(a, b) || separated_on_axes(b, a);
}

// 5x7 bitmaps, one string per row, '#' set.
inline const std::array<std::array<const char*, 7>, 13>& rank_font()
{
    static const std::array<std::array<const char*, 7>, 13> font{{
        {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}, // 2
        {"####.", "....#", "....#", ".###.", "....#", "....#", "####."}, // 3
        {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}, // 4
        {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}, // 5
        {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}, // 6
        {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}, // 7
        {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}, // 8
        {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}, // 9
        {"#.###", "#.#.#", "#.#.#", "#.#.#", "#.#.#", "#.#.#", "#.###"}, // 10
        {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}, // J
        {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}, // Q
        {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}, // K
        {"..#..", ".#.#.", "#...#", "#...#", "#####", "#...#", "#...#"}, // A
    }};
    return font;
}

inline bool in_circle(double x, double y, double cx, double cy, double r)
{
    return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
}

/// Suit silhouette test in pip coordinates [-1, 1]^2, y downward.
inline bool in_suit(Suit suit, double x, double y)
{
    const double ax = std::abs(x);
    switch (suit) {
    case Suit::diamonds: return ax / 0.75 + std::abs(y) <= 1.0;
    case Suit::hearts:
        if (in_circle(ax, y, 0.42, -0.35, 0.45)) return true;
        return y >= -0.35 && y <= 0.95 && ax <= 0.87 * (0.95 - y) / 1.3;
    case Suit::spades:
        if (in_circle(ax, y, 0.42, 0.1, 0.42)) return true;
        if (y >= -0.95 && y <= 0.1 && ax <= 0.84 * (y + 0.95) / 1.05) return true;
        return y >= 0.25 && y <= 0.95 && ax <= 0.3 * (y - 0.25) / 0.7;
    case Suit::clubs:
        if (in_circle(ax, y, 0.0, -0.45, 0.36) || in_circle(ax, y, 0.42, 0.12, 0.36) ||
            in_circle(ax, y, 0.0, 0.0, 0.2))
            return true;
        return y >= 0.25 && y <= 0.95 && ax <= 0.3 * (y - 0.25) / 0.7;
    }
    return false;
}

struct Rgb {
    double r, g, b;
};

/// Card artwork at card-local (u, v); nullopt where the rounded corner exposes the background.
inline std::optional<Rgb> card_shade(Card card, double u, double v)
{
    constexpr double hw = 0.5, hh = 0.5 * card_aspect, radius = 0.08;
    const double au = std::abs(u), av = std::abs(v);
    if (au > hw || av > hh) return std::nullopt;
    if (au > hw - radius && av > hh - radius &&
        !in_circle(au, av, hw - radius, hh - radius, radius))
        return std::nullopt;

    const Rgb ink = is_red(card.suit) ? Rgb{200, 20, 35} : Rgb{22, 22, 28};
    if (std::min(hw - au, hh - av) < 0.035) return Rgb{125, 125, 130};

    // corner rank glyph
    constexpr double gu = -0.40, gv = -0.62, cell = 0.09;
    if (u >= gu && u < gu + 5 * cell && v >= gv && v < gv + 7 * cell) {
        const int col = static_cast<int>((u - gu) / cell);
        const int row = static_cast<int>((v - gv) / cell);
        if (rank_font()[static_cast<std::size_t>(card.rank - 2)][static_cast<std::size_t>(row)]
                       [static_cast<std::size_t>(col)] == '#')
            return ink;
        return Rgb{248, 248, 244};
    }
    // small corner pip
    constexpr double sx = 0.27, sy = -0.45, sr = 0.13;
    if (std::abs(u - sx) <= sr && std::abs(v - sy) <= sr && in_suit(card.suit, (u - sx) / sr, (v - sy) / sr))
        return ink;
    // centered pip
    constexpr double px = 0.0, py = 0.33, pr = 0.3;
    if (std::abs(u - px) <= pr && std::abs(v - py) <= pr && in_suit(card.suit, (u - px) / pr, (v - py) / pr))
        return ink;
    return Rgb{248, 248, 244};
}

/// Two-octave value noise in [0, 1].
class ValueNoise {
public:
    ValueNoise(std::uint64_t seed, int cells)
        : cells_(cells)
        , lattice_(static_cast<std::size_t>((cells + 1) * (cells + 1)))
    {
        Rng rng(seed);
        for (auto& v : lattice_) v = uniform01(rng);
    }

    double at(double x, double y) const
    {
        const double gx = x * cells_, gy = y * cells_;
        const int ix = std::min(static_cast<int>(gx), cells_ - 1);
        const int iy = std::min(static_cast<int>(gy), cells_ - 1);
        const double fx = smooth(gx - ix), fy = smooth(gy - iy);
        auto l = [&](int a, int b) { return lattice_[static_cast<std::size_t>(b * (cells_ + 1) + a)]; };
        const double top = l(ix, iy) * (1 - fx) + l(ix + 1, iy) * fx;
        const double bot = l(ix, iy + 1) * (1 - fx) + l(ix + 1, iy + 1) * fx;
        return top * (1 - fy) + bot * fy;
    }

private:
    static double smooth(double t) { return t * t * (3 - 2 * t); }

    int cells_;
    std::vector<double> lattice_;
};

inline std::uint8_t to_byte(double v)
{
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

} // namespace detail

/// Throws when a card leaves the canvas or, unless allowed, two cards overlap.
inline void validate_scene(const SceneSpec& spec)
{
    require(spec.image_size >= 16, ErrorKind::invalid_argument, "image size too small");
    std::array<std::array<detail::Vec2, 4>, 3> polys{};
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& p = spec.cards[i];
        require(p.scale > 0 && p.scale < 1, ErrorKind::invalid_argument, "card scale out of range");
        polys[i] = detail::card_corners(p, spec.image_size);
        for (const auto& v : polys[i])
            require(v.x >= 0 && v.y >= 0 && v.x <= spec.image_size && v.y <= spec.image_size,
                    ErrorKind::invalid_argument, "placement outside canvas");
    }
    if (!spec.allow_overlap)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = i + 1; j < 3; ++j)
                require(detail::polygons_separated(polys[i], polys[j]), ErrorKind::invalid_argument,
                        "cards overlap");
}

/// Random layout with cards in a rough horizontal line, left to right.
inline SceneSpec random_scene_spec(Rng& rng, int image_size, std::uint64_t seed, const LayoutOptions& opt = {})
{
    SceneSpec spec;
    spec.image_size = image_size;
    spec.seed = seed;
    spec.allow_overlap = opt.allow_overlap;
    spec.background_seed = rng();
    const double s = image_size;
    for (int attempt = 0;; ++attempt) {
        const double shrink = attempt < 200 ? 1.0 : 0.85;
        const double line_y = s / 2 + uniform(rng, -0.12, 0.12) * s;
        for (std::size_t i = 0; i < 3; ++i) {
            auto& p = spec.cards[i];
            p.scale = uniform(rng, opt.min_scale, opt.max_scale) * shrink;
            p.rotation_deg = uniform(rng, -opt.max_rotation_deg, opt.max_rotation_deg);
            p.cx = s * (static_cast<double>(i) + 0.5) / 3.0 + uniform(rng, -0.04, 0.04) * s;
            p.cy = line_y + uniform(rng, -0.03, 0.03) * s;
        }
        try {
            validate_scene(spec);
            return spec;
        } catch (const Error&) {
            require(attempt < 1000, ErrorKind::invalid_argument, "cannot place cards on this canvas");
        }
    }
}

/// Renders the scene; mask i is card i's footprint (later cards own shared pixels).
inline SceneRender render_scene(const SceneSpec& spec, const Triplet& triplet)
{
    validate_scene(spec);
    const int size = spec.image_size;
    SceneRender out;
    out.image = RgbImage(size, size);
    for (auto& m : out.masks) m = Mask(size, size);

    Rng bg_rng(spec.background_seed);
    const detail::Rgb tint{uniform(bg_rng, 40, 210), uniform(bg_rng, 40, 210), uniform(bg_rng, 40, 210)};
    const detail::ValueNoise coarse(bg_rng(), 4), fine(bg_rng(), 9);

    constexpr int ss = 3;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double n = 0.65 * coarse.at((x + 0.5) / size, (y + 0.5) / size) +
                             0.35 * fine.at((x + 0.5) / size, (y + 0.5) / size);
            const double shade = 0.55 + 0.45 * n;
            const detail::Rgb bg{tint.r * shade, tint.g * shade, tint.b * shade};

            for (std::size_t c = 0; c < 3; ++c) {
                const auto uv = detail::to_card_local(spec.cards[c], size, x + 0.5, y + 0.5);
                if (std::abs(uv.x) <= 0.5 && std::abs(uv.y) <= 0.5 * card_aspect) {
                    for (auto& m : out.masks) m.at(x, y) = 0;
                    out.masks[c].at(x, y) = 1;
                }
            }

            double r = 0, g = 0, b = 0;
            for (int sy = 0; sy < ss; ++sy) {
                for (int sx = 0; sx < ss; ++sx) {
                    const double px = x + (sx + 0.5) / ss, py = y + (sy + 0.5) / ss;
                    detail::Rgb col = bg;
                    for (std::size_t c = 0; c < 3; ++c) {
                        const auto uv = detail::to_card_local(spec.cards[c], size, px, py);
                        if (auto shade_c = detail::card_shade(triplet[c], uv.x, uv.y)) col = *shade_c;
                    }
                    r += col.r;
                    g += col.g;
                    b += col.b;
                }
            }
            auto* px = out.image.at(x, y);
            px[0] = detail::to_byte(r / (ss * ss));
            px[1] = detail::to_byte(g / (ss * ss));
            px[2] = detail::to_byte(b / (ss * ss));
        }
    }
    for (const auto& m : out.masks)
        require(!m.empty(), ErrorKind::invalid_argument, "card fully occluded");
    return out;
}

} // namespace cbmaudit::scene
