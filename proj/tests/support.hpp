// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used as oracles by the unit tests and the acceptance run.
// They are written from the definitions, deliberately without reusing library internals.
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "structgen/backbone/model.hpp"
#include "structgen/core/grid.hpp"
#include "structgen/datagen/dataset.hpp"

namespace sgtest {

using structgen::BinaryMap;
using structgen::ImageGrid;

inline ImageGrid random_image(std::mt19937_64& rng, int h, int w, int c) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageGrid g(h, w, c);
    for (auto& v : g.data) v = u(rng);
    return g;
}

/// Piecewise-constant image: a few random axis-aligned rectangles on a random background.
inline ImageGrid random_blocks(std::mt19937_64& rng, int size) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> pos(0, size - 1);
    ImageGrid g(size, size, 3);
    for (int c = 0; c < 3; ++c) {
        const double bg = u(rng);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) g(y, x, c) = bg;
    }
    for (int k = 0; k < 4; ++k) {
        int y0 = pos(rng), y1 = pos(rng), x0 = pos(rng), x1 = pos(rng);
        if (y0 > y1) std::swap(y0, y1);
        if (x0 > x1) std::swap(x0, x1);
        const double col[3] = {u(rng), u(rng), u(rng)};
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                for (int c = 0; c < 3; ++c) g(y, x, c) = col[c];
    }
    return g;
}

/// Scratch directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("sgtest_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

/// Breadth-first closure of strong pixels over the 8-connected weak/strong graph.
/// cls: 0 none, 1 weak, 2 strong.
inline BinaryMap bfs_hysteresis(const std::vector<std::vector<int>>& cls) {
    const int h = static_cast<int>(cls.size()), w = static_cast<int>(cls[0].size());
    BinaryMap out(h, w, 1);
    std::deque<std::pair<int, int>> q;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (cls[y][x] == 2) {
                out(y, x) = 1;
                q.emplace_back(y, x);
            }
    while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop_front();
        for (int yy = y - 1; yy <= y + 1; ++yy)
            for (int xx = x - 1; xx <= x + 1; ++xx)
                if (yy >= 0 && xx >= 0 && yy < h && xx < w && !out(yy, xx) && cls[yy][xx] >= 1) {
                    out(yy, xx) = 1;
                    q.emplace_back(yy, xx);
                }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Naive Canny. Scalar loops, explicit 2D kernel, angle binning by comparing |gx| and |gy| slopes,
// breadth-first hysteresis over an explicit strong/weak classification.

namespace naive {

inline int mirror(int i, int n) {
    if (n == 1) return 0;
    for (;;) {
        if (i < 0) i = -1 - i;
        else if (i > n - 1) i = 2 * (n - 1) + 1 - i;
        else return i;
    }
}

inline double tie_geq(double a, double b) { return a >= b - 1e-9 * std::max(std::fabs(a), std::fabs(b)); }

inline std::vector<std::vector<double>> gray_of(const ImageGrid& img) {
    std::vector<std::vector<double>> g(img.height, std::vector<double>(img.width));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            g[y][x] = img.channels == 1 ? img(y, x, 0) : 0.299 * img(y, x, 0) + 0.587 * img(y, x, 1) + 0.114 * img(y, x, 2);
    return g;
}

/// Full 2D Gaussian applied directly (not separably), taps out to ceil(3 sigma).
inline std::vector<std::vector<double>> blur2d(const std::vector<std::vector<double>>& g, double sigma) {
    const int h = static_cast<int>(g.size()), w = static_cast<int>(g[0].size());
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k1;
    double s = 0.0;
    for (int i = -r; i <= r; ++i) {
        k1.push_back(std::exp(-double(i * i) / (2 * sigma * sigma)));
        s += k1.back();
    }
    for (auto& v : k1) v /= s;
    std::vector<std::vector<double>> out(h, std::vector<double>(w, 0.0));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) acc += k1[dy + r] * k1[dx + r] * g[mirror(y + dy, h)][mirror(x + dx, w)];
            out[y][x] = acc;
        }
    return out;
}

inline BinaryMap canny(const ImageGrid& img, double sigma, double low, double high) {
    const auto b = blur2d(gray_of(img), sigma);
    const int h = img.height, w = img.width;
    static const int SX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static const int SY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    std::vector<std::vector<double>> mag(h, std::vector<double>(w)), gxs = mag, gys = mag;
    double mmax = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double gx = 0, gy = 0;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    const double v = b[mirror(y + i - 1, h)][mirror(x + j - 1, w)];
                    gx += SX[i][j] * v;
                    gy += SY[i][j] * v;
                }
            gxs[y][x] = gx, gys[y][x] = gy;
            mag[y][x] = std::hypot(gx, gy);
            mmax = std::max(mmax, mag[y][x]);
        }
    BinaryMap out(h, w, 1);
    if (!(mmax > 0.0)) return out;

    auto at = [&](int y, int x) { return (y < 0 || x < 0 || y >= h || x >= w) ? 0.0 : mag[y][x]; };
    std::vector<std::vector<double>> thin(h, std::vector<double>(w, 0.0));
    const double t22 = std::tan(22.5 * M_PI / 180.0), t67 = std::tan(67.5 * M_PI / 180.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double m = mag[y][x];
            if (m <= 0.0) continue;
            double gx = gxs[y][x], gy = gys[y][x];
            if (gx < 0 || (gx == 0 && gy < 0)) gx = -gx, gy = -gy;  // fold to a half plane
            int dy, dx;
            const double ax = std::fabs(gx), ay = std::fabs(gy);
            if (ay <= t22 * ax) dy = 0, dx = 1;
            else if (ay >= t67 * ax) dy = 1, dx = 0;
            else if (gy > 0) dy = 1, dx = 1;
            else dy = 1, dx = -1;
            if (tie_geq(m, at(y + dy, x + dx)) && tie_geq(m, at(y - dy, x - dx))) thin[y][x] = m;
        }

    const double lo = low * mmax, hi = high * mmax;
    std::vector<std::vector<int>> cls(h, std::vector<int>(w, 0));  // 0 none, 1 weak, 2 strong
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (thin[y][x] > 0.0) cls[y][x] = tie_geq(thin[y][x], hi) ? 2 : tie_geq(thin[y][x], lo) ? 1 : 0;
    return bfs_hysteresis(cls);
}

}  // namespace naive

// ---------------------------------------------------------------------------------------------
// Metrics written longhand.

inline double mse(const ImageGrid& a, const ImageGrid& b) {
    double s = 0.0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x)
            for (int c = 0; c < a.channels; ++c) {
                const double d = a(y, x, c) - b(y, x, c);
                s += d * d;
            }
    return s / (double(a.height) * a.width * a.channels);
}

inline double psnr(const ImageGrid& a, const ImageGrid& b) {
    const double m = mse(a, b);
    return m == 0.0 ? 100.0 : std::min(100.0, 10.0 * std::log10(1.0 / m));
}

/// Windowed SSIM: one value per channel per non-overlapping 8x8 window, averaged.
inline double ssim(const ImageGrid& a, const ImageGrid& b, int win = 8) {
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    int count = 0;
    for (int c = 0; c < a.channels; ++c)
        for (int y0 = 0; y0 + win <= a.height; y0 += win)
            for (int x0 = 0; x0 + win <= a.width; x0 += win) {
                double ma = 0, mb = 0;
                for (int y = y0; y < y0 + win; ++y)
                    for (int x = x0; x < x0 + win; ++x) ma += a(y, x, c), mb += b(y, x, c);
                const double n = win * win;
                ma /= n, mb /= n;
                double va = 0, vb = 0, cov = 0;
                for (int y = y0; y < y0 + win; ++y)
                    for (int x = x0; x < x0 + win; ++x) {
                        const double da = a(y, x, c) - ma, db = b(y, x, c) - mb;
                        va += da * da, vb += db * db, cov += da * db;
                    }
                va /= n, vb /= n, cov /= n;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / count;
}

/// Brute-force tolerant matching of two binary maps (values > 0.5 on channel 0 are edges).
struct Prf {
    double p, r, f;
};
inline Prf edge_prf(const ImageGrid& pred, const ImageGrid& gt, int tol) {
    auto edge = [](const ImageGrid& g, int y, int x) { return g(y, x, 0) > 0.5; };
    auto near = [&](const ImageGrid& g, int y, int x) {
        for (int yy = 0; yy < g.height; ++yy)
            for (int xx = 0; xx < g.width; ++xx)
                if (edge(g, yy, xx) && std::abs(yy - y) <= tol && std::abs(xx - x) <= tol) return true;
        return false;
    };
    long np = 0, ng = 0, mp = 0, mg = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (edge(pred, y, x)) ++np, mp += near(gt, y, x);
            if (edge(gt, y, x)) ++ng, mg += near(pred, y, x);
        }
    if (np == 0 && ng == 0) return {1, 1, 1};
    const double p = np ? double(mp) / np : 0.0, r = ng ? double(mg) / ng : 0.0;
    return {p, r, p + r > 0 ? 2 * p * r / (p + r) : 0.0};
}

// ---------------------------------------------------------------------------------------------
// Straight-line transformer block: per-token loops for norm, per-head per-query attention with an
// explicit rotary matrix, plain matrix products for the projections.

namespace naive {

using M = Eigen::MatrixXd;

inline M norm_rows(const M& x) {
    M out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) mean += x(i, j);
        mean /= double(x.cols());
        double var = 0.0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
        var /= double(x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean) / std::sqrt(var + 1e-5);
    }
    return out;
}

inline M linear(const M& x, const structgen::Linear<double>& l, const structgen::lora::LoRAPair<double>* pr) {
    M wt = l.w;
    if (pr) wt += pr->a * pr->b * (pr->alpha / pr->a.cols());  // dense merged weight
    M y = x * wt;
    for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i) += l.b;
    return y;
}

/// Rotation of one head vector at (row, col): pair j uses axis j < P/2 ? row : col with frequency
/// base^(-(j mod P/2)/(P/2)).
inline Eigen::VectorXd rotate(const Eigen::VectorXd& v, std::array<int, 2> pos) {
    const int pairs = int(v.size()) / 2, per = pairs / 2;
    Eigen::VectorXd out(v.size());
    for (int j = 0; j < pairs; ++j) {
        const int axis = j < per ? 0 : 1;
        const double ang = pos[axis] * std::pow(structgen::backbone::kRopeBase, -double(j % per) / per);
        out(2 * j) = std::cos(ang) * v(2 * j) - std::sin(ang) * v(2 * j + 1);
        out(2 * j + 1) = std::sin(ang) * v(2 * j) + std::cos(ang) * v(2 * j + 1);
    }
    return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

struct Seq {
    M tok;
    std::vector<std::array<int, 2>> pos;
};

inline M block(const Seq& z, const Seq& c, int l, const structgen::backbone::BackboneWeights<double>& w,
               const structgen::lora::AdapterSet<double>* ad) {
    using structgen::backbone::Projection;
    const auto& bw = w.blocks[l];
    auto pr = [&](Projection p) { return ad ? &ad->at(l, p) : nullptr; };
    const int n = int(z.tok.rows()), m = int(c.tok.rows()), d = int(z.tok.cols());
    const int H = w.config.heads, hd = d / H;
    M kv(n + m, d);
    kv.topRows(n) = norm_rows(z.tok);
    if (m) kv.bottomRows(m) = norm_rows(c.tok);
    std::vector<std::array<int, 2>> kpos = z.pos;
    kpos.insert(kpos.end(), c.pos.begin(), c.pos.end());
    const M q = linear(kv.topRows(n), bw[Projection::q], pr(Projection::q));
    const M k = linear(kv, bw[Projection::k], pr(Projection::k));
    const M v = linear(kv, bw[Projection::v], pr(Projection::v));
    M o = M::Zero(n, d);
    for (int h = 0; h < H; ++h)
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd qi = rotate(q.row(i).segment(h * hd, hd).transpose(), z.pos[i]);
            std::vector<double> s(n + m);
            double smax = -1e300;
            for (int j = 0; j < n + m; ++j) {
                s[j] = qi.dot(rotate(k.row(j).segment(h * hd, hd).transpose(), kpos[j])) / std::sqrt(double(hd));
                smax = std::max(smax, s[j]);
            }
            double den = 0.0;
            for (auto& e : s) den += (e = std::exp(e - smax));
            for (int j = 0; j < n + m; ++j) o.row(i).segment(h * hd, hd) += (s[j] / den) * v.row(j).segment(h * hd, hd);
        }
    const M a = linear(o, bw[Projection::attn_out], pr(Projection::attn_out));
    M g = linear(a, bw[Projection::mlp_in], pr(Projection::mlp_in));
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = gelu(g.data()[i]);
    return z.tok + linear(g, bw[Projection::mlp_out], pr(Projection::mlp_out));
}

}  // namespace naive

// ---------------------------------------------------------------------------------------------
// Planted OCR-filter corpus: `n` source/target pairs from the scene sampler; the pairs listed in
// `planted` get a target whose text differs in one glyph. Labels are known by construction.

struct PlantedPair {
    ImageGrid src, tgt;
    bool consistent;
};

inline std::vector<PlantedPair> planted_corpus(int n, int planted, std::uint64_t seed) {
    using namespace structgen::datagen;
    const GlyphAlphabet alphabet;
    structgen::Rng rng = structgen::make_rng(seed, 5);
    std::vector<PlantedPair> out;
    for (int i = 0; i < n; ++i) {
        const SceneSpec spec = sample_scene(rng, true, alphabet);
        const Pose delta = kPromptTemplates[static_cast<std::size_t>(1 + i % 4)].delta;
        PlantedPair p{render_scene(spec, 64, alphabet), {}, i % (n / planted) != 0};
        SceneSpec other = spec;
        if (!p.consistent) {
            const std::size_t k = rng() % other.text.size();
            const std::string& cs = alphabet.charset();
            other.text[k] = cs[(cs.find(other.text[k]) + 1 + rng() % (cs.size() - 1)) % cs.size()];
        }
        p.tgt = synthesize_view(other, delta, 64, alphabet);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace sgtest
