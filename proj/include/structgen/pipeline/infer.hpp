// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "structgen/core/png_io.hpp"
#include "structgen/datagen/dataset.hpp"
#include "structgen/flow/flow.hpp"
#include "structgen/lora/adapter.hpp"
#include "structgen/pipeline/conditioning.hpp"

namespace structgen::pipeline {

using lora::AdapterSet;

/// Stage-2 noise uses its own seed stream, recorded next to the stage-1 seed.
inline std::uint64_t stage2_seed(std::uint64_t seed) { return derive_seed(seed, 2); }

template <class T>
Grid<T> sample_conditioned(const ConditioningSet<T>& cond, const BackboneWeights<T>& w, const AdapterSet<T>& adapter,
                           const flow::SamplerConfig& sampler) {
    const auto& cfg = w.config;
    flow::VelocityFn<T> field = [&](const Grid<T>& x, double t) {
        return backbone::forward(x, t, cond.streams, w, &adapter);
    };
    return flow::sample_ode(field, cfg.image_size, cfg.image_size, cfg.channels, sampler);
}

/// Raw continuous stage-1 prediction (kind = predicted).
template <class T>
CannyMap infer_stage1(const ImageGrid& src, const datagen::TokenIds& tokens, const BackboneWeights<T>& w,
                      const AdapterSet<T>& theta1, const flow::SamplerConfig& sampler, ProvenanceAudit* audit = nullptr) {
    require(theta1.stage == Stage::stage1, ErrorKind::contract, "infer_stage1 needs a stage1 adapter");
    const auto cond = make_conditioning<T>(Stage::stage1, src, tokens, nullptr, w, Phase::infer_stage1, audit);
    return CannyMap{sample_conditioned(cond, w, theta1, sampler).template cast<double>(), CannyKind::predicted};
}

struct InferResult {
    ImageGrid final_image;     // raw sampler output; clip01 before writing
    CannyMap canny_predicted;  // raw stage-1 output
    CannyMap canny_binarized;  // what stage 2 was conditioned on
    std::uint64_t stage1_seed = 0, stage2_seed = 0;
};

/// Stage 1, binarize, stage 2.
template <class T>
InferResult infer(const ImageGrid& src, const datagen::TokenIds& tokens, const BackboneWeights<T>& w,
                  const AdapterSet<T>& theta1, const AdapterSet<T>& theta2, const flow::SamplerConfig& sampler,
                  ProvenanceAudit* audit = nullptr) {
    require(theta2.stage == Stage::stage2, ErrorKind::contract, "infer needs a stage2 adapter for rendering");
    InferResult r;
    r.stage1_seed = sampler.seed;
    r.stage2_seed = stage2_seed(sampler.seed);
    r.canny_predicted = infer_stage1(src, tokens, w, theta1, sampler, audit);
    r.canny_binarized = structure::binarize_prediction(r.canny_predicted);
    const auto cond = make_conditioning<T>(Stage::stage2, src, tokens, &r.canny_binarized, w, Phase::infer_stage2, audit);
    require(cond.canny_source == CannyKind::binarized, ErrorKind::contract, "stage-2 inference lost canny provenance");
    flow::SamplerConfig s2 = sampler;
    s2.seed = r.stage2_seed;
    r.final_image = sample_conditioned(cond, w, theta2, s2).template cast<double>();
    require(all_finite(r.final_image), ErrorKind::integration, "non-finite final image");
    return r;
}

/// Writes canny_pred.png (binarized map), final.png (clipped to [0, 1]) and meta.json.
inline void write_inference(const std::filesystem::path& dir, const InferResult& r, const nlohmann::json& extra = {}) {
    std::filesystem::create_directories(dir);
    png::write(dir / "canny_pred.png", r.canny_binarized.values);
    png::write(dir / "final.png", clip01(r.final_image));
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["stage1_seed"] = r.stage1_seed;
    meta["stage2_seed"] = r.stage2_seed;
    meta["canny_kind"] = structure::to_string(r.canny_binarized.kind);
    meta["final_clipped_to_unit_range"] = true;
    datagen::write_json(dir / "meta.json", meta);
}

}  // namespace structgen::pipeline
