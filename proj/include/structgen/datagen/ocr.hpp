// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "structgen/core/grid.hpp"
#include "structgen/datagen/glyphs.hpp"
#include "structgen/datagen/scene.hpp"

namespace structgen::datagen {

struct OcrResult {
    std::string text;
    double confidence = 0.0;
    Pose pose;  // recovered pose of the text box
};

struct OcrOptions {
    double object_threshold = 0.12;  // colour distance from the background that marks the object
    double glyph_threshold = 0.15;   // luminance distance from the fill that marks a glyph pixel
    double shear_step = 0.05;
    double rotation_step_deg = 5.0;
    int pose_candidates = 40;  // poses kept after the bounding-area pre-screen
};

namespace detail {

inline double colour_distance(const ImageGrid& img, int y, int x, const Rgb& c) {
    const double dr = img(y, x, 0) - c.r, dg = img(y, x, 1) - c.g, db = img(y, x, 2) - c.b;
    return std::sqrt((dr * dr + dg * dg + db * db) / 3.0);
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

/// Pearson correlation of two equally long vectors; 0 when either is constant.
inline double correlation(const double* a, const double* b, int n) {
    double ma = 0, mb = 0;
    for (int i = 0; i < n; ++i) ma += a[i], mb += b[i];
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (int i = 0; i < n; ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va <= 0 || vb <= 0) return 0.0;
    return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

}  // namespace detail

/// Pixels that differ from the background colour (median of the border ring).
inline BinaryMap estimate_object_mask(const ImageGrid& img, double threshold = OcrOptions{}.object_threshold) {
    require(img.channels == 3, ErrorKind::shape, "object mask expects RGB");
    std::array<std::vector<double>, 3> ring;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (y == 0 || x == 0 || y == img.height - 1 || x == img.width - 1)
                for (int c = 0; c < 3; ++c) ring[c].push_back(img(y, x, c));
    const Rgb bg{detail::median(ring[0]), detail::median(ring[1]), detail::median(ring[2])};
    const int H = img.height, W = img.width;
    BinaryMap mask(H, W, 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) mask(y, x) = detail::colour_distance(img, y, x, bg) > threshold;
    // Glyphs drawn in a colour close to the background leave holes; anything the background cannot
    // reach 4-connected from the border belongs to the object.
    BinaryMap outside(H, W, 1);
    std::vector<std::pair<int, int>> stack;
    auto seed = [&](int y, int x) {
        if (!mask(y, x) && !outside(y, x)) outside(y, x) = 1, stack.emplace_back(y, x);
    };
    for (int y = 0; y < H; ++y) seed(y, 0), seed(y, W - 1);
    for (int x = 0; x < W; ++x) seed(0, x), seed(H - 1, x);
    while (!stack.empty()) {
        const auto [y, x] = stack.back();
        stack.pop_back();
        if (y > 0) seed(y - 1, x);
        if (y + 1 < H) seed(y + 1, x);
        if (x > 0) seed(y, x - 1);
        if (x + 1 < W) seed(y, x + 1);
    }
    for (std::size_t i = 0; i < mask.size(); ++i) mask.data[i] = !outside.data[i];
    return mask;
}

/// Pose-normalized template OCR. Glyph pixels are those inside the (eroded) object mask whose
/// luminance departs from the fill; the pose grid is searched for the frame in which they form an
/// axis-aligned text line, each 5x7 cell is resampled and matched by correlation.
/// Confidence is the smallest per-glyph correlation.
inline OcrResult ocr(const ImageGrid& img, const GlyphAlphabet& alphabet, const BinaryMap& mask,
                     const OcrOptions& opt = {}) {
    require(img.channels == 3, ErrorKind::shape, "ocr expects RGB");
    require(mask.height == img.height && mask.width == img.width, ErrorKind::shape, "ocr mask size mismatch");
    const int H = img.height, W = img.width;

    // Erode so outline pixels are never mistaken for glyph strokes.
    BinaryMap core(H, W, 1);
    std::vector<double> lum_inside;
    for (int y = 1; y + 1 < H; ++y)
        for (int x = 1; x + 1 < W; ++x)
            if (mask(y, x) && mask(y - 1, x) && mask(y + 1, x) && mask(y, x - 1) && mask(y, x + 1)) {
                core(y, x) = 1;
                lum_inside.push_back(luma(img(y, x, 0), img(y, x, 1), img(y, x, 2)));
            }
    if (lum_inside.size() < 16) return {};
    const double fill_lum = detail::median(lum_inside);

    BinaryMap glyph(H, W, 1);
    std::vector<std::array<double, 2>> pts;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (core(y, x) && std::abs(luma(img(y, x, 0), img(y, x, 1), img(y, x, 2)) - fill_lum) >= opt.glyph_threshold) {
                glyph(y, x) = 1;
                pts.push_back({x + 0.5 - W / 2.0, y + 0.5 - H / 2.0});
            }
    if (pts.size() < 4) return {};

    // Pre-screen: the true pose makes the glyph pixels an axis-aligned box of minimal image-space area.
    struct Candidate {
        Pose pose;
        double area;
    };
    std::vector<Candidate> cands;
    const int ns = static_cast<int>(std::lround(kMaxShear / opt.shear_step));
    const int nr = static_cast<int>(std::lround(kMaxRotationDeg / opt.rotation_step_deg));
    for (int is = -ns; is <= ns; ++is)
        for (int ir = -nr; ir <= nr; ++ir) {
            const Pose pose{is * opt.shear_step, ir * opt.rotation_step_deg};
            const PoseMatrix A = PoseMatrix::from(pose);
            const PoseMatrix inv = A.inverse();
            double u0 = 1e9, u1 = -1e9, v0 = 1e9, v1 = -1e9;
            for (const auto& p : pts) {
                const auto [u, v] = inv.apply(p[0], p[1]);
                u0 = std::min(u0, u), u1 = std::max(u1, u), v0 = std::min(v0, v), v1 = std::max(v1, v);
            }
            cands.push_back({pose, (u1 - u0 + 1.0) * (v1 - v0 + 1.0) * A.det()});
        }
    const int keep = std::min<int>(opt.pose_candidates, static_cast<int>(cands.size()));
    std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                      [](const Candidate& a, const Candidate& b) { return a.area < b.area; });

    const std::string& charset = alphabet.charset();
    std::vector<std::array<double, kGlyphRows * kGlyphCols>> templates;
    for (char ch : charset) {
        std::array<double, kGlyphRows * kGlyphCols> t{};
        const auto& g = alphabet.glyph(ch);
        for (int r = 0; r < kGlyphRows; ++r)
            for (int c = 0; c < kGlyphCols; ++c) t[r * kGlyphCols + c] = g[r][c] ? 1.0 : 0.0;
        templates.push_back(t);
    }

    OcrResult best;
    double best_score = -1e9;
    for (int ci = 0; ci < keep; ++ci) {
        const Pose pose = cands[ci].pose;
        const PoseMatrix A = PoseMatrix::from(pose);
        const PoseMatrix inv = A.inverse();
        double u0 = 1e9, u1 = -1e9, v0 = 1e9, v1 = -1e9;
        for (const auto& p : pts) {
            const auto [u, v] = inv.apply(p[0], p[1]);
            u0 = std::min(u0, u), u1 = std::max(u1, u), v0 = std::min(v0, v), v1 = std::max(v1, v);
        }
        const int k = std::max(1, static_cast<int>(std::lround((v1 - v0 + 1.0) / kGlyphRows)));
        auto sample = [&](double u, double v) {
            const auto [dx, dy] = A.apply(u, v);
            const int x = static_cast<int>(std::floor(dx + W / 2.0)), y = static_cast<int>(std::floor(dy + H / 2.0));
            return glyph.contains(y, x) ? static_cast<double>(glyph(y, x)) : 0.0;
        };
        for (int oy = static_cast<int>(std::floor(v0)) - 1; oy <= static_cast<int>(std::floor(v0)); ++oy)
            for (int lead = 0; lead <= 2; ++lead)
                for (int jitter = 0; jitter <= 1; ++jitter) {
                    const int ox = static_cast<int>(std::floor(u0)) - lead * k - jitter;
                    const int n = std::min(kMaxTextLength, static_cast<int>(std::floor((u1 - ox) / (6.0 * k))) + 1);
                    if (n < 1) continue;
                    std::string text;
                    double score = 0.0, conf = 1.0;
                    for (int i = 0; i < n; ++i) {
                        std::array<double, kGlyphRows * kGlyphCols> cell{};
                        for (int r = 0; r < kGlyphRows; ++r)
                            for (int c = 0; c < kGlyphCols; ++c) {
                                double acc = 0.0;
                                for (int a = 0; a < k; ++a)
                                    for (int b = 0; b < k; ++b)
                                        acc += sample(ox + i * 6 * k + c * k + b + 0.5, oy + r * k + a + 0.5);
                                cell[r * kGlyphCols + c] = acc / (k * k);
                            }
                        double bc = -2.0;
                        char bch = '?';
                        for (std::size_t t = 0; t < templates.size(); ++t) {
                            const double cval = detail::correlation(cell.data(), templates[t].data(), kGlyphRows * kGlyphCols);
                            if (cval > bc) bc = cval, bch = charset[t];
                        }
                        text.push_back(bch);
                        score += bc;
                        conf = std::min(conf, bc);
                    }
                    score /= n;
                    if (score > best_score) {
                        best_score = score;
                        best = {text, std::max(0.0, conf), pose};
                    }
                }
    }
    if (best.confidence <= 0.0) return {};
    return best;
}

inline OcrResult ocr(const ImageGrid& img, const GlyphAlphabet& alphabet) {
    return ocr(img, alphabet, estimate_object_mask(img));
}

enum class FilterReason { ok, empty, illegible_src, illegible_tgt, mismatch };

inline const char* to_string(FilterReason r) {
    switch (r) {
        case FilterReason::ok: return "ok";
        case FilterReason::empty: return "empty";
        case FilterReason::illegible_src: return "illegible_src";
        case FilterReason::illegible_tgt: return "illegible_tgt";
        case FilterReason::mismatch: return "mismatch";
    }
    return "?";
}

struct FilterDecision {
    bool accept = false;
    FilterReason reason = FilterReason::empty;
    OcrResult src, tgt;
};

/// Accepts a pair only when both views read the same non-empty string with confidence >= min_conf.
inline FilterDecision filter_pair(const ImageGrid& src, const ImageGrid& tgt, const GlyphAlphabet& alphabet,
                                  double min_conf = 0.7) {
    require(min_conf > 0.0 && min_conf <= 1.0, ErrorKind::domain, "min_conf must be in (0, 1]");
    FilterDecision d;
    d.src = ocr(src, alphabet);
    d.tgt = ocr(tgt, alphabet);
    if (d.src.text.empty() || d.tgt.text.empty()) d.reason = FilterReason::empty;
    else if (d.src.confidence < min_conf) d.reason = FilterReason::illegible_src;
    else if (d.tgt.confidence < min_conf) d.reason = FilterReason::illegible_tgt;
    else if (d.src.text != d.tgt.text) d.reason = FilterReason::mismatch;
    else d.reason = FilterReason::ok, d.accept = true;
    return d;
}

}  // namespace structgen::datagen
