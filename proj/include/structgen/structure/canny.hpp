// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "structgen/core/grid.hpp"

namespace structgen::structure {

/// Thresholds are fractions of the maximum gradient magnitude of the image.
struct CannyParams {
    double sigma = 1.0;
    double low = 0.1;
    double high = 0.2;

    void validate() const {
        require(sigma > 0.0, ErrorKind::config, "canny.sigma must be > 0");
        require(low > 0.0 && low < high && high <= 1.0, ErrorKind::config, "canny thresholds need 0 < low < high <= 1");
    }
    bool operator==(const CannyParams&) const = default;
};

/// Magnitude comparisons use a relative tolerance so that exact ties survive
/// summation-order differences and uniform rescaling of the input.
inline constexpr double kRelTol = 1e-9;

inline bool geq(double a, double b) { return a >= b - kRelTol * std::max(std::abs(a), std::abs(b)); }

/// Symmetric reflection: -1 -> 0, n -> n-1. Repeats for offsets larger than the extent.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

/// Normalized Gaussian taps for offsets -r..r, r = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
    require(sigma > 0.0, ErrorKind::domain, "gaussian sigma must be > 0");
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    for (auto& v : k) v /= sum;
    return k;
}

inline ImageGrid gaussian_blur(const ImageGrid& gray, double sigma) {
    require(gray.channels == 1, ErrorKind::shape, "gaussian_blur expects a single-channel grid");
    const auto k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    ImageGrid tmp(gray.height, gray.width, 1), out(gray.height, gray.width, 1);
    for (int y = 0; y < gray.height; ++y)
        for (int x = 0; x < gray.width; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * gray(y, reflect_index(x + i, gray.width));
            tmp(y, x) = acc;
        }
    for (int y = 0; y < gray.height; ++y)
        for (int x = 0; x < gray.width; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp(reflect_index(y + i, gray.height), x);
            out(y, x) = acc;
        }
    return out;
}

struct Gradients {
    ImageGrid magnitude;
    ImageGrid angle;  // radians, atan2(gy, gx), y pointing down
};

inline Gradients sobel_gradients(const ImageGrid& gray) {
    require(gray.channels == 1, ErrorKind::shape, "sobel_gradients expects a single-channel grid");
    require(gray.height >= 3 && gray.width >= 3, ErrorKind::shape, "sobel_gradients needs at least 3x3 pixels");
    Gradients g{ImageGrid(gray.height, gray.width, 1), ImageGrid(gray.height, gray.width, 1)};
    auto at = [&](int y, int x) { return gray(reflect_index(y, gray.height), reflect_index(x, gray.width)); };
    for (int y = 0; y < gray.height; ++y)
        for (int x = 0; x < gray.width; ++x) {
            const double gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) -
                              (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            const double gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)) -
                              (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            g.magnitude(y, x) = std::sqrt(gx * gx + gy * gy);
            g.angle(y, x) = std::atan2(gy, gx);
        }
    return g;
}

/// Neighbor offset (dy, dx) along the gradient axis, quantized to 0/45/90/135 degrees.
inline std::pair<int, int> gradient_axis(double angle) {
    double deg = angle * 180.0 / std::numbers::pi;
    if (deg < 0.0) deg += 180.0;
    if (deg >= 180.0) deg -= 180.0;
    if (deg < 22.5 || deg >= 157.5) return {0, 1};
    if (deg < 67.5) return {1, 1};
    if (deg < 112.5) return {1, 0};
    return {1, -1};
}

/// Keeps a pixel iff its magnitude is >= both neighbors along the gradient axis
/// (plateaus survive). Out-of-image neighbors count as zero.
inline ImageGrid nonmax_suppress(const ImageGrid& magnitude, const ImageGrid& angle) {
    require_same_shape(magnitude, angle, "nonmax_suppress");
    ImageGrid out(magnitude.height, magnitude.width, 1);
    auto mag = [&](int y, int x) { return magnitude.contains(y, x) ? magnitude(y, x) : 0.0; };
    for (int y = 0; y < magnitude.height; ++y)
        for (int x = 0; x < magnitude.width; ++x) {
            const double m = magnitude(y, x);
            if (m <= 0.0) continue;
            const auto [dy, dx] = gradient_axis(angle(y, x));
            if (geq(m, mag(y + dy, x + dx)) && geq(m, mag(y - dy, x - dx))) out(y, x) = m;
        }
    return out;
}

/// Double-threshold edge linking: strong pixels seed a flood fill over 8-connected weak pixels.
inline BinaryMap hysteresis(const ImageGrid& thinned, double low_abs, double high_abs) {
    require(low_abs > 0.0 && low_abs <= high_abs, ErrorKind::domain, "hysteresis needs 0 < low <= high");
    BinaryMap edges(thinned.height, thinned.width, 1);
    std::vector<std::pair<int, int>> stack;
    auto weak = [&](int y, int x) { return thinned(y, x) > 0.0 && geq(thinned(y, x), low_abs); };
    for (int y = 0; y < thinned.height; ++y)
        for (int x = 0; x < thinned.width; ++x)
            if (thinned(y, x) > 0.0 && geq(thinned(y, x), high_abs) && !edges(y, x)) {
                edges(y, x) = 1;
                stack.emplace_back(y, x);
                while (!stack.empty()) {
                    const auto [cy, cx] = stack.back();
                    stack.pop_back();
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int ny = cy + dy, nx = cx + dx;
                            if (!thinned.contains(ny, nx) || edges(ny, nx) || !weak(ny, nx)) continue;
                            edges(ny, nx) = 1;
                            stack.emplace_back(ny, nx);
                        }
                }
            }
    return edges;
}

/// luma -> blur -> Sobel -> NMS -> hysteresis with thresholds relative to the max magnitude.
inline BinaryMap canny(const ImageGrid& image, const CannyParams& params) {
    params.validate();
    const ImageGrid gray = to_gray(image);
    const auto grad = sobel_gradients(gaussian_blur(gray, params.sigma));
    const double max_mag = *std::max_element(grad.magnitude.data.begin(), grad.magnitude.data.end());
    if (!(max_mag > 0.0)) return BinaryMap(image.height, image.width, 1);
    const ImageGrid thin = nonmax_suppress(grad.magnitude, grad.angle);
    return hysteresis(thin, params.low * max_mag, params.high * max_mag);
}

}  // namespace structgen::structure
