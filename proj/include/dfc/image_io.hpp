#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfc/error.hpp"
#include "dfc/types.hpp"

namespace dfc {

/// 8-bit interleaved RGB raster.
struct RawImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;  // height * width * 3

    std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    friend bool operator==(const RawImage&, const RawImage&) = default;
};

struct PngSize {
    int height = 0;
    int width = 0;
    friend bool operator==(const PngSize&, const PngSize&) = default;
};

/// Reads only the header.
inline PngSize png_size(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    PngSize s{static_cast<int>(img.height), static_cast<int>(img.width)};
    png_image_free(&img);
    return s;
}

/// Any PNG colour type is converted to 8-bit RGB.
inline RawImage read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError("cannot read PNG " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    RawImage out{static_cast<int>(img.height), static_cast<int>(img.width), {}};
    out.rgb.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    return out;
}

inline void write_png(const std::filesystem::path& path, const RawImage& raw) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(raw.width);
    img.height = static_cast<png_uint_32>(raw.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, raw.rgb.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

/// [3,H,W] in [0,255].
inline Tensor<float> raw_to_pixels(const RawImage& raw) {
    Tensor<float> t({3, raw.height, raw.width});
    const std::size_t plane = static_cast<std::size_t>(raw.height) * raw.width;
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) t[c * plane + p] = raw.rgb[p * 3 + c];
    return t;
}

/// Rounds [0,255] pixels to 8 bits, clamping out-of-range values.
inline RawImage pixels_to_raw(const Tensor<float>& pixels) {
    RawImage raw{pixels.dim(1), pixels.dim(2), {}};
    const std::size_t plane = static_cast<std::size_t>(raw.height) * raw.width;
    raw.rgb.resize(plane * 3);
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c)
            raw.rgb[p * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(pixels[c * plane + p]), 0L, 255L));
    return raw;
}

template <class T>
RawImage image_to_raw(const BasicImage<T>& img) {
    return pixels_to_raw(to_pixel_space(img).template cast<float>());
}

/// Loads a PNG whose size is already a multiple of 8 as a normalized image.
inline Image load_image(const std::filesystem::path& path) {
    return from_pixel_space(raw_to_pixels(read_png(path)));
}

inline void save_image(const std::filesystem::path& path, const Image& img) { write_png(path, image_to_raw(img)); }

}  // namespace dfc
