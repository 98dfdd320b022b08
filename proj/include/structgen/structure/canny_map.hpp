// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "structgen/core/grid.hpp"
#include "structgen/core/png_io.hpp"
#include "structgen/structure/canny.hpp"

namespace structgen::structure {

inline constexpr double kEdgeValue = 0.8;
inline constexpr double kNonEdgeValue = 0.2;

/// The kind doubles as provenance: ground_truth maps come from the detector,
/// binarized maps come from a model prediction.
enum class CannyKind { ground_truth, predicted, binarized };

inline const char* to_string(CannyKind k) {
    switch (k) {
        case CannyKind::ground_truth: return "ground_truth";
        case CannyKind::predicted: return "predicted";
        case CannyKind::binarized: return "binarized";
    }
    return "?";
}

struct CannyMap {
    ImageGrid values;  // H x W x 3
    CannyKind kind = CannyKind::ground_truth;

    int height() const { return values.height; }
    int width() const { return values.width; }
    bool operator==(const CannyMap&) const = default;
};

/// 0 -> 0.2, 1 -> 0.8, replicated over three channels.
inline CannyMap remap(const BinaryMap& edges) {
    require(edges.channels == 1, ErrorKind::shape, "remap expects a single-channel edge map");
    CannyMap m{ImageGrid(edges.height, edges.width, 3), CannyKind::ground_truth};
    for (int y = 0; y < edges.height; ++y)
        for (int x = 0; x < edges.width; ++x) {
            const auto e = edges(y, x);
            require(e <= 1, ErrorKind::domain, "remap input is not binary");
            for (int c = 0; c < 3; ++c) m.values(y, x, c) = e ? kEdgeValue : kNonEdgeValue;
        }
    return m;
}

/// Inverse of remap: round((v - 0.2) / 0.6) on channel 0. Only defined for two-valued kinds.
inline BinaryMap unremap(const CannyMap& m) {
    require(m.kind != CannyKind::predicted, ErrorKind::contract, "unremap needs a ground_truth or binarized map");
    BinaryMap out(m.height(), m.width(), 1);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            const long v = std::lround((m.values(y, x, 0) - kNonEdgeValue) / (kEdgeValue - kNonEdgeValue));
            require(v == 0 || v == 1, ErrorKind::domain, "unremap input is not two-valued");
            out(y, x) = static_cast<std::uint8_t>(v);
        }
    return out;
}

/// Channel mean >= threshold -> 0.8 else 0.2 (ties go to edge).
inline CannyMap binarize_prediction(const CannyMap& pred, double threshold = 0.5) {
    const auto& v = pred.values;
    CannyMap out{ImageGrid(v.height, v.width, 3), CannyKind::binarized};
    for (int y = 0; y < v.height; ++y)
        for (int x = 0; x < v.width; ++x) {
            double mean = 0.0;
            for (int c = 0; c < v.channels; ++c) mean += v(y, x, c);
            mean /= v.channels;
            const double b = mean >= threshold ? kEdgeValue : kNonEdgeValue;
            for (int c = 0; c < 3; ++c) out.values(y, x, c) = b;
        }
    return out;
}

/// True when every pixel is 0.2 or 0.8 and identical across channels.
inline bool is_two_valued(const ImageGrid& v) {
    for (int y = 0; y < v.height; ++y)
        for (int x = 0; x < v.width; ++x) {
            const double a = v(y, x, 0);
            if (a != kEdgeValue && a != kNonEdgeValue) return false;
            for (int c = 1; c < v.channels; ++c)
                if (v(y, x, c) != a) return false;
        }
    return true;
}

inline nlohmann::json to_json(const CannyParams& p) {
    return {{"sigma", p.sigma}, {"low", p.low}, {"high", p.high}};
}

inline CannyParams canny_params_from_json(const nlohmann::json& j) {
    CannyParams p{j.at("sigma").get<double>(), j.at("low").get<double>(), j.at("high").get<double>()};
    p.validate();
    return p;
}

/// Writes `path` (8-bit RGB, 0.2 -> 51, 0.8 -> 204) and `path` with a .json sidecar.
inline void save_canny(const std::filesystem::path& path, const CannyMap& map, const CannyParams& params) {
    png::write(path, map.values);
    std::filesystem::path side = path;
    side.replace_extension(".json");
    std::ofstream f(side);
    if (!f) fail(ErrorKind::io, "cannot write " + side.string());
    nlohmann::json j = {{"kind", to_string(map.kind)}, {"params", to_json(params)},
                        {"edge_byte", png::to_byte(kEdgeValue)}, {"non_edge_byte", png::to_byte(kNonEdgeValue)}};
    f << j.dump(2) << "\n";
}

/// Loads a two-valued map written by save_canny.
inline CannyMap load_canny(const std::filesystem::path& path, CannyKind kind = CannyKind::ground_truth) {
    ImageGrid img = png::read(path);
    require(img.channels == 3, ErrorKind::validation, "canny png must be RGB: " + path.string());
    for (auto& v : img.data) {
        // Byte values 51 / 204 decode to exactly 0.2 / 0.8.
        if (std::abs(v - kEdgeValue) < 1e-9) v = kEdgeValue;
        else if (std::abs(v - kNonEdgeValue) < 1e-9) v = kNonEdgeValue;
    }
    return CannyMap{std::move(img), kind};
}

}  // namespace structgen::structure
