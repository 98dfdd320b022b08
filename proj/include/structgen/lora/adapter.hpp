// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "structgen/backbone/weights.hpp"

namespace structgen::lora {

using backbone::BackboneConfig;
using backbone::Projection;
using backbone::kProjectionCount;

enum class Stage { stage1 = 1, stage2 = 2 };

inline const char* to_string(Stage s) { return s == Stage::stage1 ? "stage1" : "stage2"; }

struct AdapterSite {
    int block_index = 0;
    Projection projection = Projection::q;
    auto operator<=>(const AdapterSite&) const = default;
};

inline std::string site_name(const AdapterSite& s) {
    return "blocks." + std::to_string(s.block_index) + "." + backbone::to_string(s.projection);
}

/// Low-rank update of one projection: delta(x) = (x A) B * alpha / r.
template <class T>
struct LoRAPair {
    Mat<T> a;  // d_in x r
    Mat<T> b;  // r x d_out
    T alpha = T(1);

    int rank() const { return static_cast<int>(a.cols()); }
    int d_in() const { return static_cast<int>(a.rows()); }
    int d_out() const { return static_cast<int>(b.cols()); }
    T scale() const { return alpha / static_cast<T>(rank()); }
};

/// base_output + (input A) B * alpha / r
template <class T>
Mat<T> apply_site(const Mat<T>& input, const Mat<T>& base_output, const LoRAPair<T>& pair) {
    require(input.cols() == pair.d_in(), ErrorKind::shape,
            "adapter input width " + std::to_string(input.cols()) + " != d_in " + std::to_string(pair.d_in()));
    require(base_output.rows() == input.rows() && base_output.cols() == pair.d_out(), ErrorKind::shape,
            "adapter base output shape mismatch");
    Mat<T> out = base_output;
    out.noalias() += ((input * pair.a) * pair.b) * pair.scale();
    return out;
}

/// One stage's adapters: every projection of every block, all of the same rank.
template <class T>
struct AdapterSet {
    int rank = 16;
    Stage stage = Stage::stage1;
    std::vector<std::array<LoRAPair<T>, kProjectionCount>> blocks;

    LoRAPair<T>& at(const AdapterSite& s) { return blocks.at(s.block_index)[static_cast<int>(s.projection)]; }
    const LoRAPair<T>& at(const AdapterSite& s) const { return blocks.at(s.block_index)[static_cast<int>(s.projection)]; }
    LoRAPair<T>& at(int block, Projection p) { return blocks[block][static_cast<int>(p)]; }
    const LoRAPair<T>& at(int block, Projection p) const { return blocks[block][static_cast<int>(p)]; }

    std::size_t site_count() const { return blocks.size() * kProjectionCount; }

    std::vector<AdapterSite> sites() const {
        std::vector<AdapterSite> out;
        for (int l = 0; l < static_cast<int>(blocks.size()); ++l)
            for (int p = 0; p < kProjectionCount; ++p) out.push_back({l, static_cast<Projection>(p)});
        return out;
    }

    /// Visits (name, matrix) for every A and B, in site order.
    template <class F>
    void for_each_matrix(F&& f) {
        for (const auto& s : sites()) {
            f(site_name(s) + ".A", at(s).a);
            f(site_name(s) + ".B", at(s).b);
        }
    }
    template <class F>
    void for_each_matrix(F&& f) const {
        for (const auto& s : sites()) {
            f(site_name(s) + ".A", at(s).a);
            f(site_name(s) + ".B", at(s).b);
        }
    }

    std::uint64_t checksum() const {
        std::uint64_t h = fnv1a(nullptr, 0);
        for_each_matrix([&](const std::string& name, const Mat<T>& m) {
            h = fnv1a(name.data(), name.size(), h);
            h = fnv1a(m.data(), sizeof(T) * static_cast<std::size_t>(m.size()), h);
        });
        return h;
    }

    /// Same structure with every entry zero (gradient accumulator).
    AdapterSet zeros_like() const {
        AdapterSet z = *this;
        for (auto& blk : z.blocks)
            for (auto& p : blk) p.a.setZero(), p.b.setZero();
        return z;
    }

    template <class U>
    AdapterSet<U> cast() const {
        AdapterSet<U> out;
        out.rank = rank;
        out.stage = stage;
        out.blocks.resize(blocks.size());
        for (std::size_t l = 0; l < blocks.size(); ++l)
            for (int p = 0; p < kProjectionCount; ++p)
                out.blocks[l][p] = {blocks[l][p].a.template cast<U>(), blocks[l][p].b.template cast<U>(),
                                    static_cast<U>(blocks[l][p].alpha)};
        return out;
    }
};

inline std::pair<int, int> projection_shape(const BackboneConfig& cfg, Projection p) {
    switch (p) {
        case Projection::mlp_in: return {cfg.width, cfg.mlp_width()};
        case Projection::mlp_out: return {cfg.mlp_width(), cfg.width};
        default: return {cfg.width, cfg.width};
    }
}

/// A ~ N(0, 0.02^2), B = 0, alpha = rank (scale 1) unless given.
inline AdapterSet<double> init_adapter_set(const BackboneConfig& cfg, int rank, Stage stage, std::uint64_t seed,
                                           double alpha = 0.0) {
    cfg.validate();
    require(rank >= 1, ErrorKind::config, "lora rank must be >= 1");
    Rng rng = make_rng(seed, 1000 + static_cast<int>(stage));
    std::normal_distribution<double> nd(0.0, 0.02);
    AdapterSet<double> set;
    set.rank = rank;
    set.stage = stage;
    set.blocks.resize(cfg.depth);
    for (auto& blk : set.blocks)
        for (int p = 0; p < kProjectionCount; ++p) {
            const auto [din, dout] = projection_shape(cfg, static_cast<Projection>(p));
            LoRAPair<double>& pair = blk[p];
            pair.a.resize(din, rank);
            for (Eigen::Index i = 0; i < pair.a.size(); ++i) pair.a.data()[i] = nd(rng);
            pair.b = Mat<double>::Zero(rank, dout);
            pair.alpha = alpha > 0.0 ? alpha : static_cast<double>(rank);
        }
    return set;
}

/// Flat view over exactly the trainable entries (every A and B), nothing from the backbone.
template <class T>
std::vector<std::span<T>> trainable_parameters(AdapterSet<T>& set) {
    std::vector<std::span<T>> view;
    set.for_each_matrix([&](const std::string&, Mat<T>& m) { view.emplace_back(m.data(), static_cast<std::size_t>(m.size())); });
    return view;
}

template <class T>
std::size_t trainable_count(const AdapterSet<T>& set) {
    std::size_t n = 0;
    set.for_each_matrix([&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

/// r * (d_in + d_out) summed over every site.
inline std::size_t expected_trainable_count(const BackboneConfig& cfg, int rank) {
    std::size_t n = 0;
    for (int p = 0; p < kProjectionCount; ++p) {
        const auto [din, dout] = projection_shape(cfg, static_cast<Projection>(p));
        n += static_cast<std::size_t>(rank) * (din + dout);
    }
    return n * static_cast<std::size_t>(cfg.depth);
}

inline constexpr char kAdapterMagic[4] = {'S', 'G', 'L', 'A'};
inline constexpr std::uint32_t kAdapterVersion = 1;

/// Blob: magic, version, stage, rank, depth, site count, then per site its name, alpha and A, B.
template <class T>
void save_adapter(const std::filesystem::path& path, const AdapterSet<T>& set) {
    using namespace backbone::detail;
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::io, "cannot write " + path.string());
    os.write(kAdapterMagic, 4);
    put_u32(os, kAdapterVersion);
    put_u32(os, static_cast<std::uint32_t>(set.stage));
    put_u32(os, static_cast<std::uint32_t>(set.rank));
    put_u32(os, static_cast<std::uint32_t>(set.blocks.size()));
    put_u32(os, static_cast<std::uint32_t>(set.site_count()));
    for (const auto& s : set.sites()) {
        const auto& p = set.at(s);
        put_str(os, site_name(s));
        const double alpha = static_cast<double>(p.alpha);
        os.write(reinterpret_cast<const char*>(&alpha), sizeof alpha);
        put_tensor(os, site_name(s) + ".A", p.a);
        put_tensor(os, site_name(s) + ".B", p.b);
    }
    if (!os) fail(ErrorKind::io, "write failed for " + path.string());
}

template <class T>
AdapterSet<T> load_adapter(const std::filesystem::path& path, const BackboneConfig& cfg) {
    using namespace backbone::detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::io, "cannot read " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    require(is && std::memcmp(magic, kAdapterMagic, 4) == 0, ErrorKind::io, "not an adapter blob: " + path.string());
    require(get_u32(is) == kAdapterVersion, ErrorKind::io, "unsupported adapter version");
    const auto stage = get_u32(is);
    require(stage == 1 || stage == 2, ErrorKind::io, "bad adapter stage id");
    const auto rank = static_cast<int>(get_u32(is));
    const auto depth = static_cast<int>(get_u32(is));
    require(depth == cfg.depth, ErrorKind::io, "adapter depth does not match backbone config");
    const auto sites = get_u32(is);
    require(sites == static_cast<std::uint32_t>(depth * kProjectionCount), ErrorKind::io, "adapter site count mismatch");
    AdapterSet<T> set = init_adapter_set(cfg, rank, static_cast<Stage>(stage), 0).template cast<T>();
    for (const auto& s : set.sites()) {
        require(get_str(is) == site_name(s), ErrorKind::io, "adapter site order mismatch");
        double alpha = 0;
        is.read(reinterpret_cast<char*>(&alpha), sizeof alpha);
        auto& p = set.at(s);
        p.alpha = static_cast<T>(alpha);
        get_tensor(is, site_name(s) + ".A", p.a);
        get_tensor(is, site_name(s) + ".B", p.b);
    }
    return set;
}

}  // namespace structgen::lora
