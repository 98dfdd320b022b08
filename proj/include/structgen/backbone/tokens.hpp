// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "structgen/backbone/weights.hpp"
#include "structgen/core/grid.hpp"

namespace structgen::backbone {

/// Rotary coordinates of a token: (row, col) of a patch, or (-1, i) for the i-th text token.
using Position = std::array<int, 2>;

template <class T>
struct TokenSequence {
    Mat<T> tokens;  // n x d
    std::vector<Role> roles;
    std::vector<Position> positions;

    int size() const { return static_cast<int>(tokens.rows()); }
    int width() const { return static_cast<int>(tokens.cols()); }

    void check() const {
        require(roles.size() == static_cast<std::size_t>(tokens.rows()) &&
                    positions.size() == static_cast<std::size_t>(tokens.rows()),
                ErrorKind::shape, "token sequence roles/positions length mismatch");
        require(tokens.allFinite(), ErrorKind::domain, "token sequence has non-finite entries");
    }
};

/// Flattens each patch in (py, px, channel) order into one row.
template <class T, class G>
Mat<T> patchify(const Grid<G>& img, int patch) {
    require(img.height % patch == 0 && img.width % patch == 0, ErrorKind::shape, "image not divisible into patches");
    const int gh = img.height / patch, gw = img.width / patch, dim = patch * patch * img.channels;
    Mat<T> out(gh * gw, dim);
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            int k = 0;
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px)
                    for (int c = 0; c < img.channels; ++c)
                        out(gy * gw + gx, k++) = static_cast<T>(img(gy * patch + py, gx * patch + px, c));
        }
    return out;
}

template <class T>
Grid<T> unpatchify(const Mat<T>& patches, int grid_h, int grid_w, int patch, int channels) {
    require(patches.rows() == grid_h * grid_w && patches.cols() == patch * patch * channels, ErrorKind::shape,
            "unpatchify shape mismatch");
    Grid<T> out(grid_h * patch, grid_w * patch, channels);
    for (int gy = 0; gy < grid_h; ++gy)
        for (int gx = 0; gx < grid_w; ++gx) {
            int k = 0;
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px)
                    for (int c = 0; c < channels; ++c) out(gy * patch + py, gx * patch + px, c) = patches(gy * grid_w + gx, k++);
        }
    return out;
}

inline std::vector<Position> grid_positions(int grid) {
    std::vector<Position> pos;
    pos.reserve(static_cast<std::size_t>(grid) * grid);
    for (int r = 0; r < grid; ++r)
        for (int c = 0; c < grid; ++c) pos.push_back({r, c});
    return pos;
}

namespace detail {

template <class T, class G>
TokenSequence<T> encode_patches(const Grid<G>& img, const Linear<T>& proj, const BackboneWeights<T>& w, Role role) {
    const auto& cfg = w.config;
    require(img.height == cfg.image_size && img.width == cfg.image_size && img.channels == cfg.channels, ErrorKind::shape,
            "image must be " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) + "x" +
                std::to_string(cfg.channels));
    TokenSequence<T> seq;
    seq.tokens = proj(patchify<T>(img, cfg.patch_size));
    seq.tokens.rowwise() += w.role_table.row(static_cast<int>(role));
    seq.roles.assign(static_cast<std::size_t>(seq.tokens.rows()), role);
    seq.positions = grid_positions(cfg.grid());
    return seq;
}

}  // namespace detail

/// Frozen image encoder: patch projection plus the image_cond role embedding.
template <class T, class G>
TokenSequence<T> encode_image(const Grid<G>& image, const BackboneWeights<T>& w) {
    return detail::encode_patches(image, w.image_embed, w, Role::image_cond);
}

/// Frozen lightweight Canny encoder (same patch layout, separate projection).
template <class T, class G>
TokenSequence<T> encode_canny(const Grid<G>& canny, const BackboneWeights<T>& w) {
    return detail::encode_patches(canny, w.canny_embed, w, Role::canny_cond);
}

/// Table lookup plus the text_cond role embedding.
template <class T>
TokenSequence<T> encode_text(const std::vector<int>& ids, const BackboneWeights<T>& w) {
    const auto& cfg = w.config;
    require(static_cast<int>(ids.size()) <= cfg.max_text_len, ErrorKind::encoding,
            "prompt has " + std::to_string(ids.size()) + " tokens, limit " + std::to_string(cfg.max_text_len));
    TokenSequence<T> seq;
    seq.tokens.resize(static_cast<Eigen::Index>(ids.size()), cfg.width);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= cfg.text_vocab)
            fail(ErrorKind::encoding, "token id " + std::to_string(ids[i]) + " at index " + std::to_string(i) +
                                          " outside vocabulary of " + std::to_string(cfg.text_vocab));
        seq.tokens.row(static_cast<Eigen::Index>(i)) =
            w.text_table.row(ids[i]) + w.role_table.row(static_cast<int>(Role::text_cond));
        seq.roles.push_back(Role::text_cond);
        seq.positions.push_back({-1, static_cast<int>(i)});
    }
    return seq;
}

}  // namespace structgen::backbone
