// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include <json.hpp>

#include "structgen/core/grid.hpp"
#include "structgen/datagen/glyphs.hpp"

namespace structgen::datagen {

enum class ShapeKind { rectangle, ellipse, triangle };

inline const char* to_string(ShapeKind s) {
    switch (s) {
        case ShapeKind::rectangle: return "rectangle";
        case ShapeKind::ellipse: return "ellipse";
        case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

inline ShapeKind shape_from_string(const std::string& s) {
    if (s == "rectangle") return ShapeKind::rectangle;
    if (s == "ellipse") return ShapeKind::ellipse;
    if (s == "triangle") return ShapeKind::triangle;
    fail(ErrorKind::validation, "unknown shape '" + s + "'");
}

struct Rgb {
    double r = 0, g = 0, b = 0;
    double luma() const { return structgen::luma(r, g, b); }
    bool operator==(const Rgb&) const = default;
};

/// Horizontal foreshortening + shear driven by a yaw-like factor, then an in-plane rotation.
struct Pose {
    double shear = 0.0;
    double rotation_deg = 0.0;

    Pose compose(const Pose& delta) const { return {shear + delta.shear, rotation_deg + delta.rotation_deg}; }
    bool operator==(const Pose&) const = default;
};

inline constexpr double kMaxShear = 0.5;
inline constexpr double kMaxRotationDeg = 45.0;
inline constexpr int kMaxTextLength = 8;
inline constexpr double kMinGlyphContrast = 0.3;

/// sin/cos of an angle in degrees, exact at multiples of 90.
inline std::pair<double, double> sincos_deg(double deg) {
    double r = std::fmod(deg, 360.0);
    if (r < 0) r += 360.0;
    if (r == 0.0) return {0.0, 1.0};
    if (r == 90.0) return {1.0, 0.0};
    if (r == 180.0) return {0.0, -1.0};
    if (r == 270.0) return {-1.0, 0.0};
    const double rad = r * std::numbers::pi / 180.0;
    return {std::sin(rad), std::cos(rad)};
}

/// 2x2 affine map from the object's local frame to image offsets: A = R(rotation) * K(shear),
/// K(s) = [[1 - |s|/2, s/2], [0, 1]].
struct PoseMatrix {
    double a, b, c, d;  // [[a, b], [c, d]]

    static PoseMatrix from(const Pose& p) {
        const auto [s, co] = sincos_deg(p.rotation_deg);
        const double k00 = 1.0 - std::abs(p.shear) / 2.0, k01 = p.shear / 2.0;
        return {co * k00, co * k01 - s, s * k00, s * k01 + co};
    }
    double det() const { return a * d - b * c; }
    PoseMatrix inverse() const {
        const double id = 1.0 / det();
        return {d * id, -b * id, -c * id, a * id};
    }
    std::array<double, 2> apply(double u, double v) const { return {a * u + b * v, c * u + d * v}; }
};

struct SceneSpec {
    ShapeKind shape = ShapeKind::rectangle;
    double half_width = 16;   // local units (pixels at identity pose)
    double half_height = 12;
    Rgb fill{0.8, 0.2, 0.2};
    Rgb background{0.1, 0.1, 0.1};
    Rgb text_color{1, 1, 1};
    std::string text;
    double anchor_u = 0.0;  // text box center, as a fraction of the half extents
    double anchor_v = 0.0;
    int glyph_scale = 2;
    Pose pose;

    bool operator==(const SceneSpec&) const = default;
};

struct TextBox {
    int origin_u = 0, origin_v = 0;  // integer local coordinates of the top-left corner
    int width = 0, height = 0;
};

inline TextBox text_box(const SceneSpec& spec) {
    const int k = spec.glyph_scale;
    const int n = static_cast<int>(spec.text.size());
    TextBox box;
    box.width = n > 0 ? n * 6 * k - k : 0;
    box.height = n > 0 ? 7 * k : 0;
    box.origin_u = static_cast<int>(std::lround(spec.anchor_u * spec.half_width - box.width / 2.0));
    box.origin_v = static_cast<int>(std::lround(spec.anchor_v * spec.half_height - box.height / 2.0));
    return box;
}

inline bool inside_shape(const SceneSpec& spec, double u, double v) {
    const double hw = spec.half_width, hh = spec.half_height;
    switch (spec.shape) {
        case ShapeKind::rectangle: return std::abs(u) <= hw && std::abs(v) <= hh;
        case ShapeKind::ellipse: return (u / hw) * (u / hw) + (v / hh) * (v / hh) <= 1.0;
        case ShapeKind::triangle: return v <= hh && std::abs(u) <= hw * (v + hh) / (2.0 * hh);
    }
    return false;
}

/// Glyphs keep one local unit of padding from the outline.
inline bool text_fits(const SceneSpec& spec) {
    if (spec.text.empty()) return true;
    const TextBox b = text_box(spec);
    const double u0 = b.origin_u - 1.0, v0 = b.origin_v - 1.0, u1 = b.origin_u + b.width + 1.0,
                 v1 = b.origin_v + b.height + 1.0;
    return inside_shape(spec, u0, v0) && inside_shape(spec, u1, v0) && inside_shape(spec, u0, v1) &&
           inside_shape(spec, u1, v1);
}

inline void validate_spec(const SceneSpec& spec, const GlyphAlphabet& alphabet) {
    require(spec.half_width > 0 && spec.half_height > 0, ErrorKind::config, "shape extents must be positive");
    require(spec.glyph_scale >= 1, ErrorKind::config, "glyph_scale must be >= 1");
    require(static_cast<int>(spec.text.size()) <= kMaxTextLength, ErrorKind::config, "text longer than 8 glyphs");
    for (char ch : spec.text)
        require(alphabet.contains(ch), ErrorKind::config, std::string("text character outside alphabet: ") + ch);
    if (!spec.text.empty())
        require(std::abs(spec.text_color.luma() - spec.fill.luma()) >= kMinGlyphContrast, ErrorKind::config,
                "glyph/fill luminance contrast below 0.3");
    require(std::abs(spec.pose.shear) <= kMaxShear, ErrorKind::pose, "shear outside [-0.5, 0.5]");
    // The rotation limit is a legibility bound, so it only applies when there is text to read.
    if (!spec.text.empty())
        require(std::abs(spec.pose.rotation_deg) <= kMaxRotationDeg, ErrorKind::pose,
                "rotation outside [-45, 45] degrees for a text-bearing scene");
    if (!text_fits(spec)) fail(ErrorKind::layout, "text '" + spec.text + "' does not fit inside the shape");
}

/// Hard-edged rasterization: each pixel center is mapped back to the object frame and classified.
inline ImageGrid render_scene(const SceneSpec& spec, int size, const GlyphAlphabet& alphabet) {
    validate_spec(spec, alphabet);
    require(size > 0, ErrorKind::config, "render size must be positive");
    const PoseMatrix inv = PoseMatrix::from(spec.pose).inverse();
    const TextBox box = text_box(spec);
    const int k = spec.glyph_scale;
    const double center = size / 2.0;
    ImageGrid img(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const auto [u, v] = inv.apply(x + 0.5 - center, y + 0.5 - center);
            Rgb col = spec.background;
            if (inside_shape(spec, u, v)) {
                col = spec.fill;
                const double tu = u - box.origin_u, tv = v - box.origin_v;
                if (!spec.text.empty() && tu >= 0 && tv >= 0 && tu < box.width && tv < box.height) {
                    const int cell = static_cast<int>(std::floor(tu / (6 * k)));
                    const int gc = static_cast<int>(std::floor((tu - cell * 6 * k) / k));
                    const int gr = static_cast<int>(std::floor(tv / k));
                    if (gc < kGlyphCols && alphabet.glyph(spec.text[cell])[gr][gc]) col = spec.text_color;
                }
            }
            img(y, x, 0) = col.r;
            img(y, x, 1) = col.g;
            img(y, x, 2) = col.b;
        }
    return img;
}

/// Novel view of the same object: re-render under the composed pose.
inline ImageGrid synthesize_view(const SceneSpec& spec, const Pose& delta, int size, const GlyphAlphabet& alphabet) {
    SceneSpec moved = spec;
    moved.pose = spec.pose.compose(delta);
    return render_scene(moved, size, alphabet);
}

inline nlohmann::json to_json(const Rgb& c) { return nlohmann::json::array({c.r, c.g, c.b}); }
inline Rgb rgb_from_json(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

inline nlohmann::json to_json(const SceneSpec& s) {
    return {{"shape", to_string(s.shape)},
            {"half_width", s.half_width},
            {"half_height", s.half_height},
            {"fill", to_json(s.fill)},
            {"background", to_json(s.background)},
            {"text_color", to_json(s.text_color)},
            {"text", s.text},
            {"anchor", {s.anchor_u, s.anchor_v}},
            {"glyph_scale", s.glyph_scale},
            {"pose", {{"shear", s.pose.shear}, {"rotation_deg", s.pose.rotation_deg}}}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
    SceneSpec s;
    s.shape = shape_from_string(j.at("shape").get<std::string>());
    s.half_width = j.at("half_width").get<double>();
    s.half_height = j.at("half_height").get<double>();
    s.fill = rgb_from_json(j.at("fill"));
    s.background = rgb_from_json(j.at("background"));
    s.text_color = rgb_from_json(j.at("text_color"));
    s.text = j.at("text").get<std::string>();
    s.anchor_u = j.at("anchor").at(0).get<double>();
    s.anchor_v = j.at("anchor").at(1).get<double>();
    s.glyph_scale = j.at("glyph_scale").get<int>();
    s.pose = {j.at("pose").at("shear").get<double>(), j.at("pose").at("rotation_deg").get<double>()};
    return s;
}

}  // namespace structgen::datagen
