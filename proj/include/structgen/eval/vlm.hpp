// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "structgen/core/png_io.hpp"
#include "structgen/core/rng.hpp"

namespace structgen::eval {

inline constexpr const char* kVlmRubric =
    "You are judging a subject-driven image edit. Image 1 is the source subject, image 2 the generated result. "
    "Score from 0 to 10: SC (subject consistency: identity, shape, colours and any text preserved), "
    "PA (prompt adherence: the requested change was made), PQ (perceptual quality: clean, artifact-free). "
    "Reply with JSON only: {\"SC\": <number>, \"PA\": <number>, \"PQ\": <number>}.";

struct VlmRequest {
    std::string rubric = kVlmRubric;
    std::string prompt;
    std::vector<std::uint8_t> source_png, generated_png;
};

/// Transport for scoring requests; returns the raw response text or throws on transport failure.
class VlmClient {
public:
    virtual ~VlmClient() = default;
    virtual std::string name() const = 0;
    virtual std::string send(const VlmRequest& request) = 0;
};

/// Offline client: scores are a pure function of the request bytes.
class MockVlmClient final : public VlmClient {
public:
    std::string name() const override { return "mock"; }
    std::string send(const VlmRequest& r) override {
        std::uint64_t h = fnv1a(r.prompt.data(), r.prompt.size());
        h = fnv1a(r.source_png.data(), r.source_png.size(), h);
        h = fnv1a(r.generated_png.data(), r.generated_png.size(), h);
        auto score = [&](std::uint64_t stream) { return static_cast<double>(derive_seed(h, stream) % 1001) / 100.0; };
        return nlohmann::json{{"SC", score(1)}, {"PA", score(2)}, {"PQ", score(3)}}.dump();
    }
};

struct VLMScore {
    double sc = 0, pa = 0, pq = 0;
    std::string raw;
    std::vector<std::string> flags;  // e.g. "PA clamped from 11"

    /// min(PA, PQ); which two sub-scores the composite uses is ambiguous, so SC stays separate.
    double final_quality() const { return std::min(pa, pq); }
};

/// A scored row, or a missing row carrying the reason.
struct VlmOutcome {
    std::optional<VLMScore> score;
    std::string error;
    std::string raw;
};

/// Parses {"SC": x, "PA": y, "PQ": z}. Out-of-range numbers are clamped to [0, 10] and flagged;
/// anything else malformed yields a missing row.
inline VlmOutcome parse_vlm_response(const std::string& raw) {
    VlmOutcome out;
    out.raw = raw;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
        out.error = std::string("unparseable response: ") + e.what();
        return out;
    }
    if (!j.is_object()) {
        out.error = "response is not a JSON object";
        return out;
    }
    VLMScore s;
    s.raw = raw;
    for (auto [key, dst] : {std::pair{"SC", &s.sc}, std::pair{"PA", &s.pa}, std::pair{"PQ", &s.pq}}) {
        if (!j.contains(key) || !j[key].is_number()) {
            out.error = std::string("missing or non-numeric ") + key;
            return out;
        }
        const double v = j[key].get<double>();
        if (!std::isfinite(v)) {
            out.error = std::string("non-finite ") + key;
            return out;
        }
        *dst = std::clamp(v, 0.0, 10.0);
        if (*dst != v) s.flags.push_back(std::string(key) + " clamped from " + nlohmann::json(v).dump());
    }
    out.score = std::move(s);
    return out;
}

inline VlmOutcome vlm_score(const ImageGrid& src, const ImageGrid& generated, const std::string& prompt, VlmClient& client) {
    VlmRequest req;
    req.prompt = prompt;
    req.source_png = png::encode(clip01(src));
    req.generated_png = png::encode(clip01(generated));
    std::string raw;
    try {
        raw = client.send(req);
    } catch (const std::exception& e) {
        VlmOutcome out;
        out.error = std::string("client failure: ") + e.what();
        return out;
    }
    return parse_vlm_response(raw);
}

}  // namespace structgen::eval
