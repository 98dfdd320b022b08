// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "structgen/backbone/tokens.hpp"
#include "structgen/lora/adapter.hpp"

namespace structgen::backbone {

using lora::AdapterSet;
using lora::LoRAPair;

template <class T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kRopeBase = 100.0;
inline constexpr double kTimeScale = 1000.0;

inline constexpr double kMinOneMinusT = 0.05;

/// Sinusoidal embedding of t in `dim` dimensions: sin over the first half, cos over the second.
template <class T>
RowVec<T> sinusoid(double t, int dim) {
    const int half = dim / 2;
    RowVec<T> e = RowVec<T>::Zero(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e(i) = static_cast<T>(std::sin(kTimeScale * t * freq));
        e(half + i) = static_cast<T>(std::cos(kTimeScale * t * freq));
    }
    return e;
}

/// Time embedding in the residual stream: a sinusoid laid out along the auxiliary basis.
template <class T>
RowVec<T> time_embedding(double t, const BackboneWeights<T>& w) {
    return sinusoid<T>(t, static_cast<int>(w.aux_basis.rows())) * w.aux_basis;
}

/// The head's output u becomes v = u / max(1 - t, 0.05). With the frozen skip u = -x_t + ..., this is
/// the velocity of the straight path towards x_t + u, so the adapters only have to supply the data.
inline double velocity_scale(double t) { return 1.0 / std::max(1.0 - t, kMinOneMinusT); }

/// Rotary tables for a list of positions: per token, per (cos, sin) pair of one head. The first half
/// of the pairs rotates with the row coordinate, the second half with the column.
template <class T>
struct Rope {
    Mat<T> cos, sin;  // n x head_dim/2

    Rope() = default;
    Rope(const std::vector<Position>& pos, int head_dim) {
        const int pairs = head_dim / 2, per_axis = pairs / 2;
        cos.resize(static_cast<Eigen::Index>(pos.size()), pairs);
        sin.resize(static_cast<Eigen::Index>(pos.size()), pairs);
        for (std::size_t i = 0; i < pos.size(); ++i)
            for (int j = 0; j < pairs; ++j) {
                const int axis = j < per_axis ? 0 : 1, k = j % per_axis;
                const double angle = pos[i][axis] * std::pow(kRopeBase, -static_cast<double>(k) / per_axis);
                cos(static_cast<Eigen::Index>(i), j) = static_cast<T>(std::cos(angle));
                sin(static_cast<Eigen::Index>(i), j) = static_cast<T>(std::sin(angle));
            }
    }

    /// Rotates every head of x in place; inverse = true applies the transpose (used by backward).
    void apply(Mat<T>& x, int heads, bool inverse = false) const {
        const int pairs = static_cast<int>(cos.cols()), hd = 2 * pairs;
        const T sign = inverse ? T(-1) : T(1);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (int h = 0; h < heads; ++h)
                for (int j = 0; j < pairs; ++j) {
                    T& a = x(i, h * hd + 2 * j);
                    T& b = x(i, h * hd + 2 * j + 1);
                    const T c = cos(i, j), s = sign * sin(i, j);
                    const T a0 = a;
                    a = a0 * c - b * s;
                    b = a0 * s + b * c;
                }
    }
};

namespace detail {

template <class T>
const LoRAPair<T>* site(const AdapterSet<T>* adapter, int block, Projection p) {
    return adapter ? &adapter->at(block, p) : nullptr;
}

/// x W + b, plus the low-rank delta when a pair is attached; keeps x A for backward.
template <class T>
Mat<T> project(const Mat<T>& x, const Linear<T>& lin, const LoRAPair<T>* pair, Mat<T>* xa_out) {
    Mat<T> y = lin(x);
    if (pair) {
        Mat<T> xa = x * pair->a;
        y.noalias() += (xa * pair->b) * pair->scale();
        if (xa_out) *xa_out = std::move(xa);
    }
    return y;
}

/// Accumulates the adapter gradient for one projection; returns dL/dx for the first `rows` rows.
template <class T>
Mat<T> project_backward(const Mat<T>& x, const Mat<T>& dy, const Linear<T>& lin, const LoRAPair<T>* pair,
                        const Mat<T>& xa, LoRAPair<T>* grad, Eigen::Index rows) {
    Mat<T> dx = dy.topRows(rows) * lin.w.transpose();
    if (pair) {
        const T s = pair->scale();
        Mat<T> dyb = (dy * pair->b.transpose()) * s;
        dx.noalias() += dyb.topRows(rows) * pair->a.transpose();
        if (grad) {
            grad->a.noalias() += x.transpose() * dyb;
            grad->b.noalias() += (xa.transpose() * dy) * s;
        }
    }
    return dx;
}

template <class T>
void check_adapter(const BackboneConfig& cfg, const AdapterSet<T>* a) {
    if (a) require(static_cast<int>(a->blocks.size()) == cfg.depth, ErrorKind::shape, "adapter depth does not match backbone");
}

}  // namespace detail

/// Everything one block keeps for its backward pass.
template <class T>
struct BlockTape {
    Mat<T> zn;      // Norm(z)
    ColVec<T> rstd;
    Mat<T> kv_in;   // [Norm(z); Norm(c)]
    Mat<T> q, k, v; // q, k after rotation
    std::vector<Mat<T>> probs;
    Mat<T> o, a, hpre, g;
    std::array<Mat<T>, kProjectionCount> xa;
};

template <class T>
struct ForwardTape {
    Mat<T> cond_norm;  // Norm of the concatenated condition tokens (constant across blocks)
    Rope<T> rope_q, rope_k;
    std::vector<BlockTape<T>> blocks;
    T out_scale = T(1);
};

/// Concatenated condition tokens and their positions.
template <class T>
TokenSequence<T> concat(const std::vector<TokenSequence<T>>& streams, int width) {
    TokenSequence<T> out;
    Eigen::Index n = 0;
    for (const auto& s : streams) {
        s.check();
        require(s.width() == width || s.size() == 0, ErrorKind::shape,
                "condition stream width " + std::to_string(s.width()) + " != backbone width " + std::to_string(width));
        n += s.tokens.rows();
    }
    out.tokens.resize(n, width);
    Eigen::Index r = 0;
    for (const auto& s : streams) {
        if (s.size() == 0) continue;
        out.tokens.middleRows(r, s.tokens.rows()) = s.tokens;
        r += s.tokens.rows();
        out.roles.insert(out.roles.end(), s.roles.begin(), s.roles.end());
        out.positions.insert(out.positions.end(), s.positions.begin(), s.positions.end());
    }
    return out;
}

/// One block on the latent tokens z (N x d) given normalized condition tokens:
///   dz = mlp_out(GELU(mlp_in(attn_out(Attn(q(Norm z), k([Norm z; Norm c]), v(...))))));  z' = z + dz.
/// Queries come from latent rows only, so the condition rows are read, never rewritten.
template <class T>
Mat<T> block_forward(const Mat<T>& z, const Mat<T>& cond_norm, const Rope<T>& rope_q, const Rope<T>& rope_k, int block,
                     const BackboneWeights<T>& w, const AdapterSet<T>* adapter, BlockTape<T>* tape) {
    const auto& cfg = w.config;
    const auto& bw = w.blocks.at(block);
    const int heads = cfg.heads, hd = cfg.head_dim();
    const Eigen::Index n = z.rows(), m = cond_norm.rows();
    BlockTape<T> local;
    BlockTape<T>& tp = tape ? *tape : local;

    tp.zn = nn::layer_norm(z, &tp.rstd);
    tp.kv_in.resize(n + m, z.cols());
    tp.kv_in.topRows(n) = tp.zn;
    if (m) tp.kv_in.bottomRows(m) = cond_norm;

    auto xa = [&](Projection p) { return &tp.xa[static_cast<int>(p)]; };
    tp.q = detail::project(tp.zn, bw[Projection::q], detail::site(adapter, block, Projection::q), xa(Projection::q));
    tp.k = detail::project(tp.kv_in, bw[Projection::k], detail::site(adapter, block, Projection::k), xa(Projection::k));
    tp.v = detail::project(tp.kv_in, bw[Projection::v], detail::site(adapter, block, Projection::v), xa(Projection::v));
    rope_q.apply(tp.q, heads);
    rope_k.apply(tp.k, heads);

    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
    tp.o.resize(n, z.cols());
    tp.probs.resize(heads);
    for (int h = 0; h < heads; ++h) {
        Mat<T> s = (tp.q.middleCols(h * hd, hd) * tp.k.middleCols(h * hd, hd).transpose()) * inv_sqrt;
        nn::softmax_rows(s);
        tp.o.middleCols(h * hd, hd).noalias() = s * tp.v.middleCols(h * hd, hd);
        tp.probs[h] = std::move(s);
    }
    tp.a = detail::project(tp.o, bw[Projection::attn_out], detail::site(adapter, block, Projection::attn_out),
                           xa(Projection::attn_out));
    tp.hpre = detail::project(tp.a, bw[Projection::mlp_in], detail::site(adapter, block, Projection::mlp_in),
                              xa(Projection::mlp_in));
    tp.g = tp.hpre.unaryExpr([](T x) { return nn::gelu(x); });
    Mat<T> dz = detail::project(tp.g, bw[Projection::mlp_out], detail::site(adapter, block, Projection::mlp_out),
                                xa(Projection::mlp_out));
    return z + dz;
}

/// Backward of block_forward; returns dL/dz and accumulates adapter gradients into grad (if any).
template <class T>
Mat<T> block_backward(const Mat<T>& dz_out, const BlockTape<T>& tp, const Rope<T>& rope_q, const Rope<T>& rope_k,
                      int block, const BackboneWeights<T>& w, const AdapterSet<T>* adapter, AdapterSet<T>* grad) {
    const auto& cfg = w.config;
    const auto& bw = w.blocks.at(block);
    const int heads = cfg.heads, hd = cfg.head_dim();
    const Eigen::Index n = dz_out.rows(), nk = tp.kv_in.rows();
    auto gsite = [&](Projection p) { return grad ? &grad->at(block, p) : nullptr; };
    auto xa = [&](Projection p) -> const Mat<T>& { return tp.xa[static_cast<int>(p)]; };
    auto bwd = [&](Projection p, const Mat<T>& x, const Mat<T>& dy, Eigen::Index rows) {
        return detail::project_backward(x, dy, bw[p], detail::site(adapter, block, p), xa(p), gsite(p), rows);
    };

    Mat<T> dg = bwd(Projection::mlp_out, tp.g, dz_out, n);
    Mat<T> dh = dg.cwiseProduct(tp.hpre.unaryExpr([](T x) { return nn::gelu_grad(x); }));
    Mat<T> da = bwd(Projection::mlp_in, tp.a, dh, n);
    Mat<T> d_o = bwd(Projection::attn_out, tp.o, da, n);

    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
    Mat<T> dq(n, dz_out.cols()), dk(nk, dz_out.cols()), dv(nk, dz_out.cols());
    for (int h = 0; h < heads; ++h) {
        const Mat<T>& p = tp.probs[h];
        const auto doh = d_o.middleCols(h * hd, hd);
        dv.middleCols(h * hd, hd).noalias() = p.transpose() * doh;
        Mat<T> dp = doh * tp.v.middleCols(h * hd, hd).transpose();
        const ColVec<T> rowdot = (dp.cwiseProduct(p)).rowwise().sum();
        Mat<T> ds = p.cwiseProduct(dp.colwise() - rowdot) * inv_sqrt;
        dq.middleCols(h * hd, hd).noalias() = ds * tp.k.middleCols(h * hd, hd);
        dk.middleCols(h * hd, hd).noalias() = ds.transpose() * tp.q.middleCols(h * hd, hd);
    }
    rope_q.apply(dq, heads, true);
    rope_k.apply(dk, heads, true);

    Mat<T> dzn = bwd(Projection::q, tp.zn, dq, n);
    dzn += bwd(Projection::k, tp.kv_in, dk, n);
    dzn += bwd(Projection::v, tp.kv_in, dv, n);
    return dz_out + nn::layer_norm_backward(dzn, tp.zn, tp.rstd);
}

/// Public single-block entry: runs one block on the latent slice and returns the updated latent slice.
template <class T>
TokenSequence<T> mm_attn_block(const TokenSequence<T>& z, const std::vector<TokenSequence<T>>& conds, int block_index,
                               const BackboneWeights<T>& w, const AdapterSet<T>* adapter = nullptr) {
    const auto& cfg = w.config;
    require(block_index >= 0 && block_index < cfg.depth, ErrorKind::shape, "block index out of range");
    z.check();
    require(z.width() == cfg.width, ErrorKind::shape,
            "latent width " + std::to_string(z.width()) + " != backbone width " + std::to_string(cfg.width));
    detail::check_adapter(cfg, adapter);
    const TokenSequence<T> c = concat(conds, cfg.width);
    std::vector<Position> kpos = z.positions;
    kpos.insert(kpos.end(), c.positions.begin(), c.positions.end());
    const Rope<T> rq(z.positions, cfg.head_dim()), rk(kpos, cfg.head_dim());
    TokenSequence<T> out = z;
    out.tokens = block_forward(z.tokens, nn::layer_norm(c.tokens), rq, rk, block_index, w, adapter,
                               static_cast<BlockTape<T>*>(nullptr));
    return out;
}

/// Latent tokens for x_t: patch embedding, latent role and time embedding.
template <class T>
TokenSequence<T> embed_latent(const Grid<T>& x_t, double t, const BackboneWeights<T>& w) {
    const auto& cfg = w.config;
    TokenSequence<T> z;
    z.tokens = w.latent_embed(patchify<T>(x_t, cfg.patch_size));
    z.tokens.rowwise() += w.role_table.row(static_cast<int>(Role::latent)) + time_embedding<T>(t, w);
    z.roles.assign(static_cast<std::size_t>(z.tokens.rows()), Role::latent);
    z.positions = grid_positions(cfg.grid());
    return z;
}

/// Velocity v_t(x_t, c). Pass a tape to enable backward().
template <class T>
Grid<T> forward(const Grid<T>& x_t, double t, const std::vector<TokenSequence<T>>& conds, const BackboneWeights<T>& w,
                const AdapterSet<T>* adapter = nullptr, ForwardTape<T>* tape = nullptr) {
    const auto& cfg = w.config;
    require(std::isfinite(t) && t >= 0.0 && t <= 1.0, ErrorKind::domain, "t must lie in [0, 1], got " + std::to_string(t));
    require(x_t.height == cfg.image_size && x_t.width == cfg.image_size && x_t.channels == cfg.channels, ErrorKind::shape,
            "latent grid must be " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) + "x" +
                std::to_string(cfg.channels));
    detail::check_adapter(cfg, adapter);

    const TokenSequence<T> c = concat(conds, cfg.width);
    TokenSequence<T> z = embed_latent(x_t, t, w);
    std::vector<Position> kpos = z.positions;
    kpos.insert(kpos.end(), c.positions.begin(), c.positions.end());

    ForwardTape<T> local;
    ForwardTape<T>& tp = tape ? *tape : local;
    tp.cond_norm = nn::layer_norm(c.tokens);
    tp.rope_q = Rope<T>(z.positions, cfg.head_dim());
    tp.rope_k = Rope<T>(kpos, cfg.head_dim());
    tp.blocks.resize(tape ? cfg.depth : 0);
    tp.out_scale = static_cast<T>(velocity_scale(t));

    Mat<T> h = std::move(z.tokens);
    for (int l = 0; l < cfg.depth; ++l)
        h = block_forward(h, tp.cond_norm, tp.rope_q, tp.rope_k, l, w, adapter, tape ? &tp.blocks[l] : nullptr);
    Mat<T> u = w.unpatch(h) * tp.out_scale;
    return unpatchify<T>(u, cfg.grid(), cfg.grid(), cfg.patch_size, cfg.channels);
}

/// Reverse pass given dL/dv. Adds adapter gradients into grad_adapter and writes dL/dx_t into grad_x.
template <class T>
void backward(const ForwardTape<T>& tape, const Grid<T>& d_out, const BackboneWeights<T>& w, const AdapterSet<T>* adapter,
              AdapterSet<T>* grad_adapter, Grid<T>* grad_x = nullptr) {
    const auto& cfg = w.config;
    require(static_cast<int>(tape.blocks.size()) == cfg.depth, ErrorKind::contract, "backward needs a recorded tape");
    Mat<T> dh = (patchify<T>(d_out, cfg.patch_size) * w.unpatch.w.transpose()) * tape.out_scale;
    for (int l = cfg.depth - 1; l >= 0; --l)
        dh = block_backward(dh, tape.blocks[l], tape.rope_q, tape.rope_k, l, w, adapter, grad_adapter);
    if (grad_x) *grad_x = unpatchify<T>(Mat<T>(dh * w.latent_embed.w.transpose()), cfg.grid(), cfg.grid(), cfg.patch_size, cfg.channels);
}

}  // namespace structgen::backbone
