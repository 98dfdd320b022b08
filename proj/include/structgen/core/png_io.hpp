// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "structgen/core/grid.hpp"

namespace structgen::png {

/// Quantizes a [0,1] value to a byte: round(clamp(v) * 255). 0.2 -> 51, 0.8 -> 204.
inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline double from_byte(std::uint8_t b) { return static_cast<double>(b) / 255.0; }

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

namespace detail {
inline void append_bytes(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + n);
}
inline void no_flush(png_structp) {}
}  // namespace detail

/// Encodes an 8-bit gray (1 channel) or RGB (3 channel) PNG in memory. Values are clipped to [0,1].
inline std::vector<std::uint8_t> encode(const ImageGrid& img) {
    require(img.channels == 1 || img.channels == 3, ErrorKind::shape, "png encode expects 1 or 3 channels");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::io, "libpng init failed");
    }
    std::vector<std::uint8_t> bytes(img.size()), out;
    for (std::size_t i = 0; i < img.size(); ++i) bytes[i] = to_byte(img.data[i]);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = bytes.data() + static_cast<std::size_t>(y) * img.width * img.channels;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::io, "libpng encode failed");
    }
    png_set_write_fn(png, &out, detail::append_bytes, detail::no_flush);
    png_set_IHDR(png, info, img.width, img.height, 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // No timestamps or text chunks: output bytes depend on pixels only.
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

inline void write(const std::filesystem::path& path, const ImageGrid& img) {
    const auto bytes = encode(img);
    detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
    if (std::fwrite(bytes.data(), 1, bytes.size(), fp.get()) != bytes.size()) fail(ErrorKind::io, "write failed for " + path.string());
}

/// Reads an 8-bit PNG as gray or RGB (alpha dropped, palettes expanded).
inline ImageGrid read(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) fail(ErrorKind::io, "cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::io, "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::io, "libpng read failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int c = static_cast<int>(png_get_channels(png, info));
    if (c != 1 && c != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::io, "unsupported channel count in " + path.string());
    }
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * c);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = bytes.data() + static_cast<std::size_t>(y) * w * c;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageGrid img(h, w, c);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = from_byte(bytes[i]);
    return img;
}

/// Horizontal concatenation of equally sized panels (gray panels are expanded to RGB).
inline ImageGrid hstack(const std::vector<ImageGrid>& panels) {
    require(!panels.empty(), ErrorKind::shape, "hstack of nothing");
    const int h = panels.front().height;
    int w = 0;
    for (const auto& p : panels) {
        require(p.height == h, ErrorKind::shape, "hstack height mismatch");
        w += p.width;
    }
    ImageGrid out(h, w, 3);
    int x0 = 0;
    for (const auto& p : panels) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < p.width; ++x)
                for (int c = 0; c < 3; ++c) out(y, x0 + x, c) = p(y, x, p.channels == 3 ? c : 0);
        x0 += p.width;
    }
    return out;
}

}  // namespace structgen::png
