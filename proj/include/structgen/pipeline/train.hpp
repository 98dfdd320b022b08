// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "structgen/datagen/dataset.hpp"
#include "structgen/flow/flow.hpp"
#include "structgen/pipeline/conditioning.hpp"

namespace structgen::pipeline {

using backbone::BackboneConfig;
using lora::AdapterSet;

struct TrainConfig {
    int batch = 16;
    int steps = 2000;
    double lr = 1e-3;
    double momentum = 0.9;
    std::string optimizer = "sgd";  // sgd | adam
    int rank = 16;
    double alpha = 0.0;  // 0 -> alpha = rank
    std::vector<double> mix{0.8, 0.2};
    std::uint64_t seed = 0;
    int sampler_steps = 32;
    structure::CannyParams canny;
    int log_every = 0;  // 0 -> silent

    void validate() const {
        require(batch >= 1, ErrorKind::config, "train.batch must be >= 1");
        require(steps >= 0, ErrorKind::config, "train.steps must be >= 0");
        require(std::isfinite(lr) && lr >= 0.0, ErrorKind::config, "train.lr must be finite and >= 0");
        require(momentum >= 0.0 && momentum < 1.0, ErrorKind::config, "train.momentum must lie in [0, 1)");
        require(optimizer == "sgd" || optimizer == "adam", ErrorKind::config, "train.optimizer must be sgd or adam");
        require(rank >= 1, ErrorKind::config, "lora.rank must be >= 1");
        require(sampler_steps >= 1, ErrorKind::config, "sampler.steps must be >= 1");
        require(!mix.empty(), ErrorKind::config, "data.mix must not be empty");
        double s = 0.0;
        for (double r : mix) {
            require(r >= 0.0, ErrorKind::config, "data.mix ratios must be >= 0");
            s += r;
        }
        require(std::abs(s - 1.0) < 1e-9, ErrorKind::config, "data.mix ratios must sum to 1");
        canny.validate();
    }
};

struct TrainResult {
    AdapterSet<double> adapter;
    std::vector<double> losses;  // per step, mean over the batch
    double seconds = 0.0;
};

/// First-order optimizer state over the flat adapter view.
template <class T>
class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, AdapterSet<T>& params) : cfg_(cfg), m_(params.zeros_like()), v_(params.zeros_like()) {}

    void step(AdapterSet<T>& params, AdapterSet<T>& grad) {
        ++t_;
        auto p = lora::trainable_parameters(params);
        auto g = lora::trainable_parameters(grad);
        auto m = lora::trainable_parameters(m_);
        auto v = lora::trainable_parameters(v_);
        const T lr = static_cast<T>(cfg_.lr), mu = static_cast<T>(cfg_.momentum);
        if (cfg_.optimizer == "sgd") {
            for (std::size_t s = 0; s < p.size(); ++s)
                for (std::size_t i = 0; i < p[s].size(); ++i) {
                    m[s][i] = mu * m[s][i] + g[s][i];
                    p[s][i] -= lr * m[s][i];
                }
            return;
        }
        const double b1 = cfg_.momentum, b2 = 0.999, eps = 1e-8;
        const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(b1, t_))), c2 = static_cast<T>(1.0 / (1.0 - std::pow(b2, t_)));
        for (std::size_t s = 0; s < p.size(); ++s)
            for (std::size_t i = 0; i < p[s].size(); ++i) {
                m[s][i] = static_cast<T>(b1) * m[s][i] + static_cast<T>(1 - b1) * g[s][i];
                v[s][i] = static_cast<T>(b2) * v[s][i] + static_cast<T>(1 - b2) * g[s][i] * g[s][i];
                p[s][i] -= lr * (m[s][i] * c1) / (std::sqrt(v[s][i] * c2) + static_cast<T>(eps));
            }
    }

private:
    TrainConfig cfg_;
    AdapterSet<T> m_, v_;
    long t_ = 0;
};

/// Training pair for one record: stage 1 regresses the remapped target canny map, stage 2 the
/// target image under ground-truth canny conditioning.
template <class T>
struct Example {
    ConditioningSet<T> cond;
    Grid<T> x1;
};

template <class T>
Example<T> make_example(Stage stage, const datagen::DatasetRecord& r, const BackboneWeights<T>& w, ProvenanceAudit* audit) {
    Example<T> ex;
    const ImageGrid src = r.src_image();
    if (stage == Stage::stage1) {
        ex.cond = make_conditioning<T>(Stage::stage1, src, r.tokens, nullptr, w, Phase::train_stage1, audit);
        const CannyMap target = r.canny();
        require(structure::is_two_valued(target.values), ErrorKind::validation,
                "stage-1 target of record " + r.id + " is not two-valued");
        ex.x1 = target.values.cast<T>();
    } else {
        // Teacher forcing: the canny stream comes from the record's ground truth, never a stage-1 model.
        const CannyMap gt = r.canny();
        ex.cond = make_conditioning<T>(Stage::stage2, src, r.tokens, &gt, w, Phase::train_stage2, audit);
        ex.x1 = r.tgt_image().cast<T>();
    }
    return ex;
}

/// One stochastic flow-matching step contribution: loss and accumulated gradient for a single example.
template <class T>
double example_loss_and_grad(const Example<T>& ex, const Grid<T>& x0, double t, const BackboneWeights<T>& w,
                             const AdapterSet<T>& adapter, AdapterSet<T>& grad, T grad_scale) {
    const Grid<T> xt = flow::sample_path(x0, ex.x1, t);
    backbone::ForwardTape<T> tape;
    const Grid<T> v = backbone::forward(xt, t, ex.cond.streams, w, &adapter, &tape);
    const double loss = flow::fm_loss(v, x0, ex.x1);
    Grid<T> dv = flow::fm_loss_grad(v, x0, ex.x1);
    for (auto& g : dv.data) g *= grad_scale;
    backbone::backward(tape, dv, w, &adapter, &grad);
    return loss;
}

using ProgressFn = std::function<void(int step, double loss)>;

/// Trains one adapter set on a mixed record stream; the backbone is read-only throughout.
/// Computation runs in T (float for speed, double for checks); the result is stored in double.
template <class T = float>
TrainResult train_stage(Stage stage, const std::vector<const std::vector<datagen::DatasetRecord>*>& datasets,
                        const TrainConfig& cfg, const BackboneWeights<T>& w, ProvenanceAudit* audit = nullptr,
                        const ProgressFn& progress = {}) {
    cfg.validate();
    require(cfg.mix.size() == datasets.size(), ErrorKind::config, "data.mix needs one ratio per dataset");
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t backbone_sum = w.checksum();

    AdapterSet<T> adapter =
        lora::init_adapter_set(w.config, cfg.rank, stage, derive_seed(cfg.seed, 11), cfg.alpha).template cast<T>();
    Optimizer<T> opt(cfg, adapter);
    datagen::MixedSampler sampler(datasets, cfg.mix, derive_seed(cfg.seed, 12));
    Rng rng = make_rng(cfg.seed, 13);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    TrainResult result;
    result.losses.reserve(static_cast<std::size_t>(cfg.steps));
    const int size = w.config.image_size, ch = w.config.channels;
    for (int step = 0; step < cfg.steps; ++step) {
        AdapterSet<T> grad = adapter.zeros_like();
        double loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto draw = sampler.next();
            const Example<T> ex = make_example<T>(stage, *draw.record, w, audit);
            const Grid<T> x0 = flow::draw_prior<T>(size, size, ch, rng());
            const double t = unit(rng);
            loss += example_loss_and_grad(ex, x0, t, w, adapter, grad, static_cast<T>(1.0 / cfg.batch));
        }
        loss /= cfg.batch;
        if (!std::isfinite(loss)) fail(ErrorKind::training, "non-finite loss at step " + std::to_string(step));
        result.losses.push_back(loss);
        opt.step(adapter, grad);
        if (progress) progress(step, loss);
    }
    require(w.checksum() == backbone_sum, ErrorKind::training, "backbone weights changed during training");
    result.adapter = adapter.template cast<double>();
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

template <class T = float>
TrainResult train_stage1(const std::vector<const std::vector<datagen::DatasetRecord>*>& datasets, const TrainConfig& cfg,
                         const BackboneWeights<T>& w, ProvenanceAudit* audit = nullptr, const ProgressFn& progress = {}) {
    return train_stage<T>(Stage::stage1, datasets, cfg, w, audit, progress);
}

template <class T = float>
TrainResult train_stage2(const std::vector<const std::vector<datagen::DatasetRecord>*>& datasets, const TrainConfig& cfg,
                         const BackboneWeights<T>& w, ProvenanceAudit* audit = nullptr, const ProgressFn& progress = {}) {
    return train_stage<T>(Stage::stage2, datasets, cfg, w, audit, progress);
}

/// `step,loss` CSV.
inline void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& losses) {
    std::ofstream f(path);
    if (!f) fail(ErrorKind::io, "cannot write " + path.string());
    f << "step,loss\n";
    f.precision(17);
    for (std::size_t i = 0; i < losses.size(); ++i) f << i << "," << losses[i] << "\n";
    if (!f) fail(ErrorKind::io, "write failed for " + path.string());
}

inline double window_mean(const std::vector<double>& v, std::size_t from, std::size_t count) {
    require(from + count <= v.size() && count > 0, ErrorKind::domain, "window outside loss trace");
    double s = 0.0;
    for (std::size_t i = from; i < from + count; ++i) s += v[i];
    return s / static_cast<double>(count);
}

}  // namespace structgen::pipeline
