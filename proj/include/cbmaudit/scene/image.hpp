#pragma once

// 8-bit raster images and masks with PNG input/output.

#include "cbmaudit/common/error.hpp"

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cbmaudit::scene {

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(int w, int h)
        : width(w)
        , height(h)
        , pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, 0)
    {
    }

    std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
    const std::uint8_t* at(int x, int y) const
    {
        return &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
    }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// One byte per pixel, 0 outside and 1 inside.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int w, int h)
        : width(w)
        , height(h)
        , bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0)
    {
    }

    std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }

    std::size_t area() const
    {
        std::size_t n = 0;
        for (auto b : bits) n += b != 0;
        return n;
    }
    bool empty() const { return area() == 0; }

    friend bool operator==(const Mask&, const Mask&) = default;
};

namespace detail {

inline void write_png(const std::filesystem::path& path, int width, int height, png_uint_32 format,
                      const void* data)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;
    if (png_image_write_to_file(&image, path.string().c_str(), 0, data, 0, nullptr) == 0) {
        std::string msg = image.message;
        png_image_free(&image);
        fail(ErrorKind::io, "cannot write PNG " + path.string() + ": " + msg);
    }
}

inline std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, int& width,
                                          int& height)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&image, path.string().c_str()) == 0)
        fail(ErrorKind::io, "cannot read PNG " + path.string() + ": " + image.message);
    image.format = format;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
        std::string msg = image.message;
        png_image_free(&image);
        fail(ErrorKind::io, "cannot decode PNG " + path.string() + ": " + msg);
    }
    width = static_cast<int>(image.width);
    height = static_cast<int>(image.height);
    return buffer;
}

} // namespace detail

inline void write_png(const std::filesystem::path& path, const RgbImage& img)
{
    detail::write_png(path, img.width, img.height, PNG_FORMAT_RGB, img.pixels.data());
}

/// Masks are stored as grayscale, 0 outside and 255 inside.
inline void write_png(const std::filesystem::path& path, const Mask& mask)
{
    std::vector<std::uint8_t> gray(mask.bits.size());
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.bits[i] ? 255 : 0;
    detail::write_png(path, mask.width, mask.height, PNG_FORMAT_GRAY, gray.data());
}

inline RgbImage read_png_rgb(const std::filesystem::path& path)
{
    RgbImage img;
    img.pixels = detail::read_png(path, PNG_FORMAT_RGB, img.width, img.height);
    return img;
}

inline Mask read_png_mask(const std::filesystem::path& path)
{
    Mask mask;
    mask.bits = detail::read_png(path, PNG_FORMAT_GRAY, mask.width, mask.height);
    for (auto& b : mask.bits) b = b >= 128 ? 1 : 0;
    return mask;
}

} // namespace cbmaudit::scene
