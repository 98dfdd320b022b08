// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "structgen/backbone/model.hpp"
#include "structgen/datagen/prompts.hpp"
#include "structgen/structure/canny_map.hpp"

namespace structgen::pipeline {

using backbone::BackboneWeights;
using backbone::TokenSequence;
using lora::Stage;
using structure::CannyKind;
using structure::CannyMap;

/// Ordered condition streams for one stage. Stage 1: {image, text}; stage 2: {image, text, canny}.
template <class T>
struct ConditioningSet {
    Stage stage = Stage::stage1;
    std::vector<TokenSequence<T>> streams;
    std::optional<CannyKind> canny_source;  // provenance of the canny stream, stage 2 only

    std::size_t token_count() const {
        std::size_t n = 0;
        for (const auto& s : streams) n += static_cast<std::size_t>(s.size());
        return n;
    }

    bool operator==(const ConditioningSet& o) const {
        if (stage != o.stage || canny_source != o.canny_source || streams.size() != o.streams.size()) return false;
        for (std::size_t i = 0; i < streams.size(); ++i)
            if (streams[i].tokens != o.streams[i].tokens || streams[i].roles != o.streams[i].roles ||
                streams[i].positions != o.streams[i].positions)
                return false;
        return true;
    }
};

/// Where a conditioning set is being built; decides which canny provenance is legal.
enum class Phase { train_stage1, train_stage2, infer_stage1, infer_stage2, free };

inline const char* to_string(Phase p) {
    switch (p) {
        case Phase::train_stage1: return "train_stage1";
        case Phase::train_stage2: return "train_stage2";
        case Phase::infer_stage1: return "infer_stage1";
        case Phase::infer_stage2: return "infer_stage2";
        case Phase::free: return "free";
    }
    return "?";
}

/// Counts of canny provenance seen at conditioning time, per phase. Thread-safe.
class ProvenanceAudit {
public:
    void record(Phase phase, CannyKind kind) {
        std::lock_guard lock(mu_);
        ++counts_[{phase, kind}];
    }
    long count(Phase phase, CannyKind kind) const {
        std::lock_guard lock(mu_);
        auto it = counts_.find({phase, kind});
        return it == counts_.end() ? 0 : it->second;
    }
    long total(Phase phase) const {
        std::lock_guard lock(mu_);
        long n = 0;
        for (const auto& [key, c] : counts_)
            if (key.first == phase) n += c;
        return n;
    }

private:
    mutable std::mutex mu_;
    std::map<std::pair<Phase, CannyKind>, long> counts_;
};

inline void assert_provenance(Phase phase, CannyKind kind) {
    if (phase == Phase::train_stage2 && kind != CannyKind::ground_truth)
        fail(ErrorKind::contract, std::string("train_stage2 must condition on ground_truth canny, got ") + structure::to_string(kind));
    if (phase == Phase::infer_stage2 && kind != CannyKind::binarized)
        fail(ErrorKind::contract, std::string("stage-2 inference must condition on the binarized prediction, got ") +
                                      structure::to_string(kind));
    if (kind == CannyKind::predicted)
        fail(ErrorKind::contract, "raw predicted canny maps must be binarized before conditioning");
}

/// Encodes the inputs of one stage with the frozen encoders. Stage 1 takes no canny map, stage 2
/// requires one.
template <class T>
ConditioningSet<T> make_conditioning(Stage stage, const ImageGrid& src, const datagen::TokenIds& tokens,
                                     const CannyMap* canny, const BackboneWeights<T>& w, Phase phase = Phase::free,
                                     ProvenanceAudit* audit = nullptr) {
    if (stage == Stage::stage1 && canny) fail(ErrorKind::contract, "stage1 conditioning takes no canny map");
    if (stage == Stage::stage2 && !canny) fail(ErrorKind::contract, "stage2 conditioning requires a canny map");
    ConditioningSet<T> c;
    c.stage = stage;
    c.streams.push_back(backbone::encode_image(src, w));
    c.streams.push_back(backbone::encode_text(tokens, w));
    if (canny) {
        assert_provenance(phase, canny->kind);
        if (audit) audit->record(phase, canny->kind);
        c.streams.push_back(backbone::encode_canny(canny->values, w));
        c.canny_source = canny->kind;
    }
    return c;
}

}  // namespace structgen::pipeline
