// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "structgen/core/error.hpp"

namespace structgen {

/// Dense H x W x C raster, channel-interleaved (HWC) row-major storage.
template <class T>
struct Grid {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, int c, T fill = T(0)) : height(h), width(w), channels(c) {
        require(h >= 0 && w >= 0 && c >= 0, ErrorKind::shape, "negative grid dimension");
        data.assign(static_cast<std::size_t>(h) * w * c, fill);
    }

    std::size_t size() const noexcept { return data.size(); }
    bool empty() const noexcept { return data.empty(); }

    std::size_t index(int y, int x, int c = 0) const noexcept {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    T& operator()(int y, int x, int c = 0) noexcept { return data[index(y, x, c)]; }
    const T& operator()(int y, int x, int c = 0) const noexcept { return data[index(y, x, c)]; }

    bool contains(int y, int x) const noexcept { return y >= 0 && x >= 0 && y < height && x < width; }

    template <class U>
    bool same_shape(const Grid<U>& o) const noexcept {
        return height == o.height && width == o.width && channels == o.channels;
    }

    std::span<T> span() noexcept { return data; }
    std::span<const T> span() const noexcept { return data; }

    template <class U>
    Grid<U> cast() const {
        Grid<U> out(height, width, channels);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    bool operator==(const Grid&) const = default;
};

using ImageGrid = Grid<double>;
/// Single-channel 0/1 map (edge maps, masks).
using BinaryMap = Grid<std::uint8_t>;

template <class T, class U>
void require_same_shape(const Grid<T>& a, const Grid<U>& b, const std::string& what) {
    if (!a.same_shape(b)) {
        fail(ErrorKind::shape, what + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) + "x" +
                                   std::to_string(a.channels) + " vs " + std::to_string(b.height) + "x" +
                                   std::to_string(b.width) + "x" + std::to_string(b.channels));
    }
}

/// Rec.601 luma.
inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline ImageGrid to_gray(const ImageGrid& img) {
    if (img.channels == 1) return img;
    require(img.channels == 3, ErrorKind::shape, "to_gray expects 1 or 3 channels");
    ImageGrid g(img.height, img.width, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) g(y, x) = luma(img(y, x, 0), img(y, x, 1), img(y, x, 2));
    return g;
}

template <class T>
bool all_finite(const Grid<T>& g) {
    return std::all_of(g.data.begin(), g.data.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
}

inline ImageGrid clip01(ImageGrid g) {
    for (auto& v : g.data) v = std::clamp(v, 0.0, 1.0);
    return g;
}

}  // namespace structgen
