// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "structgen/datagen/ocr.hpp"
#include "structgen/structure/canny_map.hpp"

namespace structgen::eval {

using structure::CannyKind;
using structure::CannyMap;

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline double mse(const ImageGrid& a, const ImageGrid& b) {
    require_same_shape(a, b, "mse");
    require(!a.empty(), ErrorKind::shape, "mse of empty images");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return s / static_cast<double>(a.size());
}

/// 10 log10(peak^2 / MSE), capped at 100 dB (identical images return the cap).
inline double psnr(const ImageGrid& a, const ImageGrid& b, double peak = 1.0) {
    const double e = mse(a, b);
    if (e == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / e));
}

/// Mean SSIM over non-overlapping window x window blocks, per channel, averaged over channels.
/// Partial blocks at the right and bottom edges are skipped.
inline double ssim(const ImageGrid& a, const ImageGrid& b, int window = 8, double c1 = kSsimC1, double c2 = kSsimC2) {
    require_same_shape(a, b, "ssim");
    require(window >= 1, ErrorKind::domain, "ssim window must be >= 1");
    require(a.height >= window && a.width >= window, ErrorKind::shape, "image smaller than the ssim window");
    const double n = static_cast<double>(window) * window;
    double total = 0.0;
    long count = 0;
    for (int c = 0; c < a.channels; ++c)
        for (int by = 0; by + window <= a.height; by += window)
            for (int bx = 0; bx + window <= a.width; bx += window) {
                double ma = 0, mb = 0;
                for (int y = by; y < by + window; ++y)
                    for (int x = bx; x < bx + window; ++x) ma += a(y, x, c), mb += b(y, x, c);
                ma /= n, mb /= n;
                double va = 0, vb = 0, cov = 0;
                for (int y = by; y < by + window; ++y)
                    for (int x = bx; x < bx + window; ++x) {
                        const double da = a(y, x, c) - ma, db = b(y, x, c) - mb;
                        va += da * da, vb += db * db, cov += da * db;
                    }
                va /= n, vb /= n, cov /= n;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

struct EdgeScore {
    double precision = 0, recall = 0, f1 = 0;
};

namespace detail {

/// Per pixel: is there an edge in `other` within Chebyshev distance tol?
inline long matched(const BinaryMap& from, const BinaryMap& other, int tol) {
    long m = 0;
    for (int y = 0; y < from.height; ++y)
        for (int x = 0; x < from.width; ++x) {
            if (!from(y, x)) continue;
            bool hit = false;
            for (int dy = -tol; dy <= tol && !hit; ++dy)
                for (int dx = -tol; dx <= tol && !hit; ++dx)
                    hit = other.contains(y + dy, x + dx) && other(y + dy, x + dx);
            m += hit;
        }
    return m;
}

inline long count_on(const BinaryMap& m) {
    long n = 0;
    for (auto v : m.data) n += v != 0;
    return n;
}

}  // namespace detail

/// Precision, recall and F1 with a Chebyshev matching tolerance. Empty vs empty scores (1, 1, 1);
/// an empty side otherwise scores 0 on the ratio it defines.
inline EdgeScore edge_f1(const CannyMap& pred, const CannyMap& gt, int tolerance_px = 1) {
    require(pred.kind != CannyKind::predicted, ErrorKind::contract, "edge_f1 needs a binarized prediction");
    require(gt.kind == CannyKind::ground_truth, ErrorKind::contract, "edge_f1 needs a ground_truth reference");
    require(tolerance_px >= 0, ErrorKind::domain, "tolerance must be >= 0");
    require_same_shape(pred.values, gt.values, "edge_f1");
    const BinaryMap p = structure::unremap(pred), g = structure::unremap(gt);
    const long np = detail::count_on(p), ng = detail::count_on(g);
    if (np == 0 && ng == 0) return {1, 1, 1};
    EdgeScore s;
    s.precision = np ? static_cast<double>(detail::matched(p, g, tolerance_px)) / np : 0.0;
    s.recall = ng ? static_cast<double>(detail::matched(g, p, tolerance_px)) / ng : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

struct OcrSample {
    ImageGrid image;
    std::string truth;
};

/// Fraction of samples whose OCR string equals the truth exactly.
inline double ocr_accuracy(const std::vector<OcrSample>& samples, const datagen::GlyphAlphabet& alphabet) {
    require(!samples.empty(), ErrorKind::domain, "ocr_accuracy needs at least one sample");
    long hits = 0;
    for (const auto& s : samples) hits += datagen::ocr(s.image, alphabet).text == s.truth;
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

}  // namespace structgen::eval
