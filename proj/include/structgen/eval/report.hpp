// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "structgen/datagen/dataset.hpp"
#include "structgen/eval/metrics.hpp"
#include "structgen/eval/vlm.hpp"
#include "structgen/pipeline/infer.hpp"

namespace structgen::eval {

inline constexpr int kReportSchemaVersion = 1;

struct EvalReport {
    std::string kind;
    std::string run_id;
    std::map<std::string, double> metrics;
    std::map<std::string, std::string> definitions;  // metric -> how it was computed
    nlohmann::json config = nlohmann::json::object();
    std::vector<nlohmann::json> rows;
    std::vector<std::pair<std::string, ImageGrid>> grids;  // written by emit_report
    std::vector<std::string> grid_paths;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["schema_version"] = kReportSchemaVersion;
        j["kind"] = kind;
        j["run_id"] = run_id;
        j["metrics"] = metrics;
        j["definitions"] = definitions;
        j["config"] = config;
        j["rows"] = rows;
        j["grids"] = grid_paths;
        return j;
    }

    static EvalReport from_json(const nlohmann::json& j) {
        require(j.at("schema_version").get<int>() == kReportSchemaVersion, ErrorKind::io, "unsupported report schema");
        EvalReport r;
        r.kind = j.at("kind").get<std::string>();
        r.run_id = j.at("run_id").get<std::string>();
        r.metrics = j.at("metrics").get<std::map<std::string, double>>();
        r.definitions = j.at("definitions").get<std::map<std::string, std::string>>();
        r.config = j.at("config");
        r.rows = j.at("rows").get<std::vector<nlohmann::json>>();
        r.grid_paths = j.at("grids").get<std::vector<std::string>>();
        return r;
    }
};

/// 12 hex digits of FNV-1a over the canonical config dump and any extra identity (adapter checksums).
inline std::string make_run_id(const nlohmann::json& config, std::uint64_t extra = 0) {
    const std::string s = config.dump();
    std::uint64_t h = fnv1a(s.data(), s.size());
    h = fnv1a(&extra, sizeof extra, h);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf, 12);
}

/// src | GT canny | predicted canny | final.
inline ImageGrid panel_grid(const ImageGrid& src, const ImageGrid& gt, const ImageGrid& pred, const ImageGrid& final) {
    return png::hstack({clip01(src), clip01(gt), clip01(pred), clip01(final)});
}

struct EvalConfig {
    flow::SamplerConfig sampler;
    int tolerance_px = 1;
    int max_grids = 8;
    std::uint64_t seed = 0;
    int vlm_concurrency = 1;

    nlohmann::json to_json() const {
        return {{"sampler.steps", sampler.steps}, {"sampler.seed", sampler.seed}, {"eval.tolerance_px", tolerance_px},
                {"eval.max_grids", max_grids},    {"eval.seed", seed},            {"vlm.concurrency", vlm_concurrency}};
    }
};

/// Maps (src, neutral tokens, per-record seed) to a raw stage-1 prediction.
using CannyPredictor = std::function<CannyMap(const ImageGrid& src, const datagen::TokenIds& tokens, std::uint64_t seed)>;

/// Neutral-prompt reconstruction of the source structure: for every record predict from I_src,
/// binarize, and compare with remap(canny(I_src)).
inline EvalReport run_reconstruction_eval(const std::vector<datagen::DatasetRecord>& records, const CannyPredictor& predict,
                                          const EvalConfig& cfg) {
    require(!records.empty(), ErrorKind::domain, "reconstruction eval needs at least one record");
    EvalReport rep;
    rep.kind = "reconstruction";
    rep.config = cfg.to_json();
    rep.config["eval.prompt"] = std::string(datagen::prompt_template(datagen::kNeutralPrompt).text);
    rep.config["eval.records"] = records.size();
    const auto tokens = datagen::tokenize(datagen::prompt_template(datagen::kNeutralPrompt).text);
    double sp = 0, ss = 0, sf = 0, spr = 0, sre = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const ImageGrid src = r.src_image();
        const CannyMap gt = structure::remap(structure::canny(src, r.params));
        const std::uint64_t seed = derive_seed(cfg.sampler.seed, i);
        const CannyMap pred = predict(src, tokens, seed);
        const CannyMap bin = structure::binarize_prediction(pred);
        const double p = psnr(bin.values, gt.values), s = ssim(bin.values, gt.values);
        const EdgeScore e = edge_f1(bin, gt, cfg.tolerance_px);
        sp += p, ss += s, sf += e.f1, spr += e.precision, sre += e.recall;
        rep.rows.push_back({{"id", r.id},
                            {"source_dataset", datagen::to_string(r.source)},
                            {"seed", seed},
                            {"psnr", p},
                            {"ssim", s},
                            {"edge_precision", e.precision},
                            {"edge_recall", e.recall},
                            {"edge_f1", e.f1}});
        if (static_cast<int>(rep.grids.size()) < cfg.max_grids)
            rep.grids.emplace_back("grid_" + r.id + ".png", panel_grid(src, gt.values, bin.values, pred.values));
    }
    const double n = static_cast<double>(records.size());
    rep.metrics = {{"psnr_mean", sp / n},          {"ssim_mean", ss / n},        {"edge_f1_mean", sf / n},
                   {"edge_precision_mean", spr / n}, {"edge_recall_mean", sre / n}, {"count", n}};
    rep.definitions = {
        {"psnr_mean", "mean over records of 10*log10(1/MSE) between binarized prediction and remap(canny(I_src)), "
                      "both remapped 3-channel maps in [0.2, 0.8], peak 1.0, capped at 100 dB"},
        {"ssim_mean", "mean over records of SSIM on the same maps, 8x8 non-overlapping windows, C1=0.01^2, C2=0.03^2"},
        {"edge_f1_mean", "mean over records of edge F1 with Chebyshev tolerance eval.tolerance_px"},
        {"edge_precision_mean", "mean over records of matched predicted edge pixels / predicted edge pixels"},
        {"edge_recall_mean", "mean over records of matched reference edge pixels / reference edge pixels"},
        {"count", "number of evaluated records"}};
    return rep;
}

template <class T>
EvalReport run_reconstruction_eval(const std::vector<datagen::DatasetRecord>& records,
                                   const backbone::BackboneWeights<T>& w, const lora::AdapterSet<T>& theta1,
                                   const EvalConfig& cfg) {
    CannyPredictor predict = [&](const ImageGrid& src, const datagen::TokenIds& tokens, std::uint64_t seed) {
        flow::SamplerConfig s = cfg.sampler;
        s.seed = seed;
        return pipeline::infer_stage1(src, tokens, w, theta1, s);
    };
    EvalReport rep = run_reconstruction_eval(records, predict, cfg);
    rep.run_id = make_run_id(rep.config, theta1.checksum() ^ w.checksum());
    return rep;
}

/// Maps (src, prompt tokens, seed) to a two-stage inference result.
using Generator =
    std::function<pipeline::InferResult(const ImageGrid& src, const datagen::TokenIds& tokens, std::uint64_t seed)>;

/// Full two-stage generation on each record's own prompt: OCR of the output against text_content
/// (records with text), pixel metrics against I_tgt, and VLM SC/PA/PQ through the given client.
inline EvalReport run_generation_eval(const std::vector<datagen::DatasetRecord>& records, const Generator& generate,
                                      VlmClient* client, const EvalConfig& cfg) {
    require(!records.empty(), ErrorKind::domain, "generation eval needs at least one record");
    const datagen::GlyphAlphabet alphabet;
    EvalReport rep;
    rep.kind = "generation";
    rep.config = cfg.to_json();
    rep.config["vlm.client"] = client ? client->name() : "none";
    rep.config["eval.records"] = records.size();
    double sp = 0, ss = 0, sf = 0, sc = 0, pa = 0, pq = 0, fq = 0;
    long scored = 0, missing = 0, flagged = 0, text_rows = 0, ocr_hits = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const ImageGrid src = r.src_image(), tgt = r.tgt_image();
        const std::uint64_t seed = derive_seed(cfg.sampler.seed, i);
        const pipeline::InferResult out = generate(src, r.tokens, seed);
        const ImageGrid final = clip01(out.final_image);
        const CannyMap gt = r.canny();
        nlohmann::json row = {{"id", r.id},
                              {"source_dataset", datagen::to_string(r.source)},
                              {"prompt", r.prompt},
                              {"seed", seed},
                              {"psnr", psnr(final, tgt)},
                              {"ssim", ssim(final, tgt)},
                              {"edge_f1", edge_f1(out.canny_binarized, gt, cfg.tolerance_px).f1}};
        sp += row["psnr"].get<double>(), ss += row["ssim"].get<double>(), sf += row["edge_f1"].get<double>();
        if (!r.text_content.empty()) {
            const auto read = datagen::ocr(final, alphabet);
            row["text_content"] = r.text_content;
            row["ocr_text"] = read.text;
            row["ocr_match"] = read.text == r.text_content;
            ++text_rows;
            ocr_hits += read.text == r.text_content;
        }
        if (client) {
            const VlmOutcome v = vlm_score(src, final, r.prompt, *client);
            if (v.score) {
                row["SC"] = v.score->sc, row["PA"] = v.score->pa, row["PQ"] = v.score->pq;
                row["final_quality"] = v.score->final_quality();
                sc += v.score->sc, pa += v.score->pa, pq += v.score->pq, fq += v.score->final_quality();
                ++scored;
                if (!v.score->flags.empty()) {
                    std::string f;
                    for (const auto& s : v.score->flags) f += (f.empty() ? "" : "; ") + s;
                    row["vlm_flags"] = f;
                    ++flagged;
                }
            } else {
                row["vlm_missing"] = true;
                row["vlm_error"] = v.error;
                ++missing;
            }
        }
        rep.rows.push_back(std::move(row));
        if (static_cast<int>(rep.grids.size()) < cfg.max_grids)
            rep.grids.emplace_back("grid_" + r.id + ".png", panel_grid(src, gt.values, out.canny_binarized.values, final));
    }
    const double n = static_cast<double>(records.size());
    rep.metrics = {{"psnr_mean", sp / n}, {"ssim_mean", ss / n}, {"edge_f1_mean", sf / n}, {"count", n}};
    rep.definitions = {
        {"psnr_mean", "mean PSNR of the clipped final image against I_tgt, peak 1.0, cap 100 dB"},
        {"ssim_mean", "mean SSIM of the clipped final image against I_tgt, 8x8 non-overlapping windows"},
        {"edge_f1_mean", "mean edge F1 of the binarized stage-1 map against C_tgt"},
        {"count", "number of evaluated records"}};
    if (text_rows) {
        rep.metrics["ocr_accuracy"] = static_cast<double>(ocr_hits) / text_rows;
        rep.metrics["ocr_count"] = static_cast<double>(text_rows);
        rep.definitions["ocr_accuracy"] = "fraction of text-bearing records whose OCR of the final image equals text_content exactly";
        rep.definitions["ocr_count"] = "number of text-bearing records";
    }
    if (client) {
        const double k = scored ? static_cast<double>(scored) : 1.0;
        rep.metrics["vlm_sc_mean"] = sc / k, rep.metrics["vlm_pa_mean"] = pa / k, rep.metrics["vlm_pq_mean"] = pq / k;
        rep.metrics["vlm_final_quality_mean"] = fq / k;
        rep.metrics["vlm_scored"] = static_cast<double>(scored);
        rep.metrics["vlm_missing"] = static_cast<double>(missing);
        rep.metrics["vlm_flagged"] = static_cast<double>(flagged);
        rep.definitions["vlm_sc_mean"] = "mean Subject Consistency (0-10) over scored rows";
        rep.definitions["vlm_pa_mean"] = "mean Prompt Adherence (0-10) over scored rows";
        rep.definitions["vlm_pq_mean"] = "mean Perceptual Quality (0-10) over scored rows";
        rep.definitions["vlm_final_quality_mean"] =
            "mean over scored rows of min(PA, PQ); which two sub-scores the composite uses is ambiguous, raw scores kept";
        rep.definitions["vlm_scored"] = "rows with three parsed scores";
        rep.definitions["vlm_missing"] = "rows whose request or response failed; never silently dropped";
        rep.definitions["vlm_flagged"] = "rows with at least one score clamped into [0, 10]";
    }
    return rep;
}

/// OCR accuracy of two-stage outputs on text-bearing records only.
inline EvalReport run_ocr_eval(const std::vector<datagen::DatasetRecord>& records, const Generator& generate,
                               const EvalConfig& cfg) {
    std::vector<datagen::DatasetRecord> text;
    for (const auto& r : records)
        if (!r.text_content.empty()) text.push_back(r);
    require(!text.empty(), ErrorKind::domain, "ocr eval needs text-bearing records");
    EvalReport rep = run_generation_eval(text, generate, nullptr, cfg);
    rep.kind = "ocr";
    return rep;
}

inline std::string csv_field(const nlohmann::json& v) {
    std::string s = v.is_string() ? v.get<std::string>() : v.dump();
    if (s.find_first_of(",\"\n") != std::string::npos) {
        std::string q = "\"";
        for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        return q + "\"";
    }
    return s;
}

/// report.json (sorted keys), rows.csv (union of row keys, sorted) and the panel grids.
inline void emit_report(EvalReport& rep, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    rep.grid_paths.clear();
    for (const auto& [name, img] : rep.grids) {
        png::write(dir / name, img);
        rep.grid_paths.push_back(name);
    }
    datagen::write_json(dir / "report.json", rep.to_json());
    std::set<std::string> cols;
    for (const auto& r : rep.rows)
        for (const auto& [k, v] : r.items()) cols.insert(k);
    std::ofstream f(dir / "rows.csv");
    if (!f) fail(ErrorKind::io, "cannot write " + (dir / "rows.csv").string());
    bool first = true;
    for (const auto& c : cols) f << (first ? "" : ",") << c, first = false;
    f << "\n";
    for (const auto& r : rep.rows) {
        first = true;
        for (const auto& c : cols) {
            f << (first ? "" : ",") << (r.contains(c) ? csv_field(r[c]) : "");
            first = false;
        }
        f << "\n";
    }
    if (!f) fail(ErrorKind::io, "write failed for rows.csv");
}

inline EvalReport load_report(const std::filesystem::path& path) { return EvalReport::from_json(datagen::read_json(path)); }

}  // namespace structgen::eval
