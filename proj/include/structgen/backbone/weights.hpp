// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "structgen/backbone/config.hpp"
#include "structgen/backbone/tensor.hpp"
#include "structgen/core/rng.hpp"

namespace structgen::backbone {

/// Token roles; also indexes the role-embedding table.
enum class Role : int { latent = 0, image_cond = 1, text_cond = 2, canny_cond = 3 };
inline constexpr int kRoleCount = 4;

inline const char* to_string(Role r) {
    switch (r) {
        case Role::latent: return "latent";
        case Role::image_cond: return "image_cond";
        case Role::text_cond: return "text_cond";
        case Role::canny_cond: return "canny_cond";
    }
    return "?";
}

/// The six projections of one MM-attention block. Proj_out of the block is mlp_out.
enum class Projection : int { q = 0, k = 1, v = 2, attn_out = 3, mlp_in = 4, mlp_out = 5 };
inline constexpr int kProjectionCount = 6;

inline const char* to_string(Projection p) {
    switch (p) {
        case Projection::q: return "q";
        case Projection::k: return "k";
        case Projection::v: return "v";
        case Projection::attn_out: return "attn_out";
        case Projection::mlp_in: return "mlp_in";
        case Projection::mlp_out: return "mlp_out";
    }
    return "?";
}

template <class T>
struct BlockWeights {
    std::array<Linear<T>, kProjectionCount> proj;

    Linear<T>& operator[](Projection p) { return proj[static_cast<int>(p)]; }
    const Linear<T>& operator[](Projection p) const { return proj[static_cast<int>(p)]; }
};

/// Frozen toy diffusion transformer: patch embeddings for the noisy latent and the two image-like
/// condition encoders, a text table, role embeddings, L blocks and an unpatch projection.
template <class T>
struct BackboneWeights {
    BackboneConfig config;
    std::uint64_t seed = 0;
    Linear<T> latent_embed, image_embed, canny_embed, unpatch;
    Mat<T> text_table;  // text_vocab x d
    Mat<T> role_table;  // kRoleCount x d
    Mat<T> aux_basis;   // k x d orthonormal rows the unpatch head cannot see (identity when d <= patch_dim)
    std::vector<BlockWeights<T>> blocks;
    bool frozen = false;

    /// Visits every parameter tensor with a stable name, in a fixed order.
    template <class F>
    void for_each_param(F&& f) {
        visit(*this, f);
    }
    template <class F>
    void for_each_param(F&& f) const {
        visit(*this, f);
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_param([&](const std::string&, const auto& m) { n += static_cast<std::size_t>(m.size()); });
        return n;
    }

    /// FNV-1a over names, shapes and raw values.
    std::uint64_t checksum() const {
        std::uint64_t h = fnv1a(nullptr, 0);
        for_each_param([&](const std::string& name, const auto& m) {
            h = fnv1a(name.data(), name.size(), h);
            const std::int64_t dims[2] = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
            h = fnv1a(dims, sizeof(dims), h);
            h = fnv1a(m.data(), sizeof(T) * static_cast<std::size_t>(m.size()), h);
        });
        return h;
    }

    template <class U>
    BackboneWeights<U> cast() const {
        BackboneWeights<U> out;
        out.config = config;
        out.seed = seed;
        out.latent_embed = latent_embed.template cast<U>();
        out.image_embed = image_embed.template cast<U>();
        out.canny_embed = canny_embed.template cast<U>();
        out.unpatch = unpatch.template cast<U>();
        out.text_table = text_table.template cast<U>();
        out.role_table = role_table.template cast<U>();
        out.aux_basis = aux_basis.template cast<U>();
        out.blocks.resize(blocks.size());
        for (std::size_t l = 0; l < blocks.size(); ++l)
            for (int p = 0; p < kProjectionCount; ++p) out.blocks[l].proj[p] = blocks[l].proj[p].template cast<U>();
        out.frozen = frozen;
        return out;
    }

private:
    template <class Self, class F>
    static void visit(Self& s, F& f) {
        auto lin = [&](const std::string& name, auto& l) {
            f(name + ".w", l.w);
            f(name + ".b", l.b);
        };
        lin("latent_embed", s.latent_embed);
        lin("image_embed", s.image_embed);
        lin("canny_embed", s.canny_embed);
        lin("unpatch", s.unpatch);
        f(std::string("text_table"), s.text_table);
        f(std::string("role_table"), s.role_table);
        f(std::string("aux_basis"), s.aux_basis);
        for (std::size_t l = 0; l < s.blocks.size(); ++l)
            for (int p = 0; p < kProjectionCount; ++p)
                lin("blocks." + std::to_string(l) + "." + to_string(static_cast<Projection>(p)), s.blocks[l].proj[p]);
    }
};

namespace detail {

inline Mat<double> gaussian(Rng& rng, int rows, int cols, double stddev) {
    std::normal_distribution<double> nd(0.0, stddev);
    Mat<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

inline Linear<double> gaussian_linear(Rng& rng, int in, int out, double w_std, double b_std) {
    return {gaussian(rng, in, out, w_std), gaussian(rng, 1, out, b_std)};
}

}  // namespace detail

/// Deterministic "pretrained stand-in": seeded Gaussian weights with a fixed denoising skip. When
/// d > patch_dim, the latent patch embedding takes patch_dim orthonormal rows of a random rotation and
/// the unpatch head is its negated transpose, so the residual stream carries -x_t straight to the
/// output. The remaining d - patch_dim rows (aux_basis) hold the latent role and time embeddings,
/// invisible to the unpatch head.
inline BackboneWeights<double> init_backbone(const BackboneConfig& config, std::uint64_t seed) {
    config.validate();
    const int d = config.width, p = config.patch_dim(), m = config.mlp_width();
    Rng rng = make_rng(seed, 1);
    BackboneWeights<double> w;
    w.config = config;
    w.seed = seed;

    Mat<double> embed;  // p x d
    if (d > p) {
        Eigen::HouseholderQR<Mat<double>> qr(detail::gaussian(rng, d, d, 1.0));
        const Mat<double> q = qr.householderQ();
        embed = q.topRows(p);
        w.aux_basis = q.bottomRows(d - p);
    } else {
        Eigen::HouseholderQR<Mat<double>> qr(detail::gaussian(rng, p, d, 1.0));
        embed = qr.householderQ() * Mat<double>::Identity(p, d);
        w.aux_basis = Mat<double>::Identity(d, d);
    }
    w.latent_embed = {embed, RowVec<double>::Zero(d)};
    w.unpatch = {-embed.transpose(), RowVec<double>::Zero(p)};

    w.image_embed = detail::gaussian_linear(rng, p, d, 1.0 / std::sqrt(p), 0.1);
    w.canny_embed = detail::gaussian_linear(rng, p, d, 1.0 / std::sqrt(p), 0.1);
    w.text_table = detail::gaussian(rng, config.text_vocab, d, 1.0);
    w.role_table = detail::gaussian(rng, kRoleCount, d, 0.5);
    w.role_table.row(static_cast<int>(Role::latent)) =
        detail::gaussian(rng, 1, static_cast<int>(w.aux_basis.rows()), 0.5) * w.aux_basis;
    w.blocks.resize(config.depth);
    for (auto& b : w.blocks) {
        b[Projection::q] = detail::gaussian_linear(rng, d, d, 1.0 / std::sqrt(d), 0.02);
        b[Projection::k] = detail::gaussian_linear(rng, d, d, 1.0 / std::sqrt(d), 0.02);
        b[Projection::v] = detail::gaussian_linear(rng, d, d, 1.0 / std::sqrt(d), 0.02);
        b[Projection::attn_out] = detail::gaussian_linear(rng, d, d, 1.0 / std::sqrt(d), 0.02);
        b[Projection::mlp_in] = detail::gaussian_linear(rng, d, m, 1.0 / std::sqrt(d), 0.02);
        b[Projection::mlp_out] = detail::gaussian_linear(rng, m, d, 0.5 / std::sqrt(m), 0.0);
    }
    w.frozen = true;
    return w;
}

inline constexpr char kWeightsMagic[4] = {'S', 'G', 'B', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
inline void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) fail(ErrorKind::io, "truncated blob");
    return v;
}
inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) fail(ErrorKind::io, "truncated blob");
    return v;
}
inline std::string get_str(std::istream& is) {
    const auto n = get_u32(is);
    require(n < (1u << 20), ErrorKind::io, "implausible string length in blob");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) fail(ErrorKind::io, "truncated blob");
    return s;
}

template <class M>
void put_tensor(std::ostream& os, const std::string& name, const M& m) {
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(m.rows()));
    put_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double v = static_cast<double>(m.data()[i]);
        os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

template <class M>
void get_tensor(std::istream& is, const std::string& expect, M& m) {
    const std::string name = get_str(is);
    require(name == expect, ErrorKind::io, "blob index mismatch: expected '" + expect + "', found '" + name + "'");
    const auto rows = get_u32(is), cols = get_u32(is);
    require(rows == static_cast<std::uint32_t>(m.rows()) && cols == static_cast<std::uint32_t>(m.cols()), ErrorKind::io,
            "blob shape mismatch for '" + name + "'");
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        double v = 0;
        is.read(reinterpret_cast<char*>(&v), sizeof v);
        m.data()[i] = static_cast<typename M::Scalar>(v);
    }
    if (!is) fail(ErrorKind::io, "truncated tensor '" + name + "'");
}

}  // namespace detail

/// Binary blob: magic, version, config (key-value text), seed, tensor count, then per tensor its
/// name, shape and float64 values.
template <class T>
void save_weights(const std::filesystem::path& path, const BackboneWeights<T>& w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::io, "cannot write " + path.string());
    os.write(kWeightsMagic, 4);
    detail::put_u32(os, kWeightsVersion);
    detail::put_str(os, to_kv(w.config));
    detail::put_u64(os, w.seed);
    std::uint32_t count = 0;
    w.for_each_param([&](const std::string&, const auto&) { ++count; });
    detail::put_u32(os, count);
    w.for_each_param([&](const std::string& name, const auto& m) { detail::put_tensor(os, name, m); });
    if (!os) fail(ErrorKind::io, "write failed for " + path.string());
}

template <class T>
BackboneWeights<T> load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::io, "cannot read " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    require(is && std::memcmp(magic, kWeightsMagic, 4) == 0, ErrorKind::io, "not a backbone weights blob");
    require(detail::get_u32(is) == kWeightsVersion, ErrorKind::io, "unsupported weights version");
    const BackboneConfig cfg = from_kv(detail::get_str(is));
    const auto seed = detail::get_u64(is);
    // Allocate by shape through init, then overwrite every tensor from the blob.
    BackboneWeights<T> w = init_backbone(cfg, seed).template cast<T>();
    const auto count = detail::get_u32(is);
    std::uint32_t expected = 0;
    w.for_each_param([&](const std::string&, const auto&) { ++expected; });
    require(count == expected, ErrorKind::io, "weights blob tensor count mismatch");
    w.for_each_param([&](const std::string& name, auto& m) { detail::get_tensor(is, name, m); });
    w.frozen = true;
    return w;
}

}  // namespace structgen::backbone
