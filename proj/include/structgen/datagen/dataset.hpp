// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "structgen/core/png_io.hpp"
#include "structgen/core/rng.hpp"
#include "structgen/datagen/ocr.hpp"
#include "structgen/datagen/prompts.hpp"
#include "structgen/datagen/scene.hpp"
#include "structgen/structure/canny_map.hpp"

namespace structgen::datagen {

using ByteImage = Grid<std::uint8_t>;

inline ByteImage to_bytes(const ImageGrid& img) {
    ByteImage out(img.height, img.width, img.channels);
    for (std::size_t i = 0; i < img.size(); ++i) out.data[i] = png::to_byte(img.data[i]);
    return out;
}

inline ImageGrid from_bytes(const ByteImage& img) {
    ImageGrid out(img.height, img.width, img.channels);
    for (std::size_t i = 0; i < img.size(); ++i) out.data[i] = png::from_byte(img.data[i]);
    return out;
}

enum class SourceDataset { generic, texting };

inline const char* to_string(SourceDataset s) { return s == SourceDataset::generic ? "generic" : "texting"; }

inline SourceDataset source_from_string(const std::string& s) {
    if (s == "generic") return SourceDataset::generic;
    if (s == "texting") return SourceDataset::texting;
    fail(ErrorKind::validation, "unknown source_dataset '" + s + "'");
}

/// One training tuple. Images are kept as bytes; every colour the renderer emits is a multiple of
/// 1/255 so the byte form is lossless.
struct DatasetRecord {
    std::string id;
    ByteImage src, tgt;
    int prompt_id = 0;
    std::string prompt;
    TokenIds tokens;
    std::string text_content;
    BinaryMap edges;  // canny(I_tgt); C_tgt = remap(edges)
    SourceDataset source = SourceDataset::generic;
    std::uint64_t seed = 0;
    SceneSpec spec;
    structure::CannyParams params;

    ImageGrid src_image() const { return from_bytes(src); }
    ImageGrid tgt_image() const { return from_bytes(tgt); }
    structure::CannyMap canny() const { return structure::remap(edges); }
};

struct PipelineStats {
    long attempts = 0;
    long accepted = 0;
    std::map<std::string, long> reasons;
    double acceptance_rate() const { return attempts ? static_cast<double>(accepted) / attempts : 0.0; }
};

struct Dataset {
    SourceDataset kind = SourceDataset::generic;
    int image_size = 64;
    std::uint64_t seed = 0;
    structure::CannyParams params;
    std::vector<DatasetRecord> records;
    PipelineStats stats;
};

struct BuildOptions {
    int image_size = 64;
    structure::CannyParams params;
    double min_conf = 0.7;
    int workers = 1;
};

namespace detail {

inline double pick(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline int pick_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline Rgb random_colour(Rng& rng) {
    return {pick_int(rng, 0, 255) / 255.0, pick_int(rng, 0, 255) / 255.0, pick_int(rng, 0, 255) / 255.0};
}

inline double rms_distance(const Rgb& a, const Rgb& b) {
    return std::sqrt(((a.r - b.r) * (a.r - b.r) + (a.g - b.g) * (a.g - b.g) + (a.b - b.b) * (a.b - b.b)) / 3.0);
}

/// Template 0 (neutral) with probability 0.3, the four pose edits share the rest.
inline int sample_prompt(Rng& rng) {
    const double u = pick(rng, 0.0, 1.0);
    if (u < 0.3) return kNeutralPrompt;
    return 1 + std::min(3, static_cast<int>((u - 0.3) / 0.175));
}

}  // namespace detail

/// Random scene; text-bearing scenes get 2-3 glyphs at scale 2 and are resampled until the text fits.
inline SceneSpec sample_scene(Rng& rng, bool with_text, const GlyphAlphabet& alphabet) {
    using namespace detail;
    SceneSpec s;
    for (;;) {
        s.shape = static_cast<ShapeKind>(pick_int(rng, 0, 2));
        if (with_text) {
            s.half_width = pick_int(rng, 19, 23);
            s.half_height = pick_int(rng, 13, 17);
            if (s.shape == ShapeKind::triangle) s.half_width += 4, s.half_height += 4;
        } else {
            s.half_width = pick_int(rng, 12, 22);
            s.half_height = pick_int(rng, 10, 17);
        }
        s.background = random_colour(rng);
        s.fill = random_colour(rng);
        if (rms_distance(s.fill, s.background) < 0.25 || std::abs(s.fill.luma() - s.background.luma()) < 0.15) continue;
        s.text.clear();
        s.pose = {pick_int(rng, -5, 5) * 0.05, pick_int(rng, -5, 5) * 5.0};
        if (!with_text) return s;

        s.text_color = random_colour(rng);
        if (std::abs(s.text_color.luma() - s.fill.luma()) < 0.35) continue;
        const int len = pick_int(rng, 2, 3);
        for (int i = 0; i < len; ++i) s.text.push_back(alphabet.charset()[pick_int(rng, 0, 35)]);
        s.glyph_scale = 2;
        s.anchor_u = pick(rng, -0.1, 0.1);
        s.anchor_v = s.shape == ShapeKind::triangle ? pick(rng, 0.35, 0.5) : pick(rng, -0.15, 0.15);
        if (text_fits(s)) return s;
    }
}

struct Attempt {
    std::optional<DatasetRecord> record;
    FilterReason reason = FilterReason::ok;
};

/// One pipeline attempt: sample -> render -> rotated view -> (texting) OCR filter -> Canny target.
inline Attempt make_attempt(SourceDataset kind, std::uint64_t seed, const BuildOptions& opt,
                            const GlyphAlphabet& alphabet) {
    Rng rng = make_rng(seed, 17);
    const bool texting = kind == SourceDataset::texting;
    DatasetRecord rec;
    rec.seed = seed;
    rec.source = kind;
    rec.params = opt.params;
    rec.spec = sample_scene(rng, texting, alphabet);
    rec.prompt_id = detail::sample_prompt(rng);
    const auto& tmpl = prompt_template(rec.prompt_id);
    rec.prompt = std::string(tmpl.text);
    rec.tokens = tokenize(rec.prompt);

    const ImageGrid src = render_scene(rec.spec, opt.image_size, alphabet);
    const ImageGrid tgt = synthesize_view(rec.spec, tmpl.delta, opt.image_size, alphabet);
    Attempt a;
    if (texting) {
        const FilterDecision d = filter_pair(src, tgt, alphabet, opt.min_conf);
        a.reason = d.reason;
        if (!d.accept) return a;
        rec.text_content = d.src.text;
    }
    rec.src = to_bytes(src);
    rec.tgt = to_bytes(tgt);
    rec.edges = structure::canny(tgt, opt.params);
    a.record = std::move(rec);
    return a;
}

inline std::string record_id(std::size_t i) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << i;
    return os.str();
}

/// Runs attempts with per-attempt seeds derive_seed(seed, i) until n records are accepted.
/// Attempts are evaluated in parallel batches and committed in attempt order, so the result does
/// not depend on the worker count.
inline Dataset build_dataset(SourceDataset kind, int n, std::uint64_t seed, const BuildOptions& opt = {}) {
    require(n >= 1, ErrorKind::config, "dataset size must be >= 1");
    opt.params.validate();
    const GlyphAlphabet alphabet;
    Dataset ds;
    ds.kind = kind;
    ds.image_size = opt.image_size;
    ds.seed = seed;
    ds.params = opt.params;
    const int workers = std::max(1, opt.workers);
    const long hard_cap = 100L * n;
    long next = 0;
    while (static_cast<int>(ds.records.size()) < n) {
        const int batch = workers * 4;
        std::vector<Attempt> results(static_cast<std::size_t>(batch));
        auto run = [&](int w) {
            for (int i = w; i < batch; i += workers)
                results[static_cast<std::size_t>(i)] = make_attempt(kind, derive_seed(seed, static_cast<std::uint64_t>(next + i)), opt, alphabet);
        };
        if (workers == 1) run(0);
        else {
            std::vector<std::jthread> pool;
            for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
        }
        for (auto& a : results) {
            if (static_cast<int>(ds.records.size()) >= n) break;
            ++ds.stats.attempts;
            ++ds.stats.reasons[to_string(a.reason)];
            if (a.record) {
                a.record->id = record_id(ds.records.size());
                ds.records.push_back(std::move(*a.record));
                ++ds.stats.accepted;
            }
        }
        next += batch;
        if (ds.stats.attempts >= 10L * n && ds.stats.acceptance_rate() < 0.01)
            fail(ErrorKind::pipeline, "acceptance rate " + std::to_string(ds.stats.acceptance_rate()) + " below 1% after " +
                                          std::to_string(ds.stats.attempts) + " attempts");
        if (ds.stats.attempts >= hard_cap && static_cast<int>(ds.records.size()) < n)
            fail(ErrorKind::pipeline, "only " + std::to_string(ds.records.size()) + " of " + std::to_string(n) +
                                          " records after " + std::to_string(ds.stats.attempts) + " attempts");
    }
    return ds;
}

inline constexpr int kDatasetSchemaVersion = 1;

inline nlohmann::json record_meta(const DatasetRecord& r) {
    return {{"id", r.id},
            {"prompt", r.prompt},
            {"prompt_id", r.prompt_id},
            {"token_ids", r.tokens},
            {"text_content", r.text_content},
            {"spec", to_json(r.spec)},
            {"delta_pose", {{"shear", prompt_template(r.prompt_id).delta.shear},
                            {"rotation_deg", prompt_template(r.prompt_id).delta.rotation_deg}}},
            {"params", structure::to_json(r.params)},
            {"seed", r.seed},
            {"source_dataset", to_string(r.source)}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) fail(ErrorKind::io, "cannot write " + path.string());
    f << j.dump(2) << "\n";
    if (!f) fail(ErrorKind::io, "write failed for " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::io, "cannot read " + path.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io, "malformed json in " + path.string() + ": " + e.what());
    }
}

/// Layout: records/<id>/{src,tgt,canny}.png + canny.json + meta.json, and manifest.json.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "records", ec);
    if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    for (const auto& r : ds.records) {
        const fs::path rd = dir / "records" / r.id;
        fs::create_directories(rd, ec);
        if (ec) fail(ErrorKind::io, "cannot create " + rd.string());
        png::write(rd / "src.png", r.src_image());
        png::write(rd / "tgt.png", r.tgt_image());
        structure::save_canny(rd / "canny.png", r.canny(), r.params);
        write_json(rd / "meta.json", record_meta(r));
    }
    nlohmann::json reasons = nlohmann::json::object();
    for (const auto& [k, v] : ds.stats.reasons) reasons[k] = v;
    write_json(dir / "manifest.json", {{"schema_version", kDatasetSchemaVersion},
                                       {"kind", to_string(ds.kind)},
                                       {"count", ds.records.size()},
                                       {"image_size", ds.image_size},
                                       {"seed", ds.seed},
                                       {"params", structure::to_json(ds.params)},
                                       {"attempts", ds.stats.attempts},
                                       {"accepted", ds.stats.accepted},
                                       {"acceptance_rate", ds.stats.acceptance_rate()},
                                       {"reject_reasons", reasons}});
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest = read_json(dir / "manifest.json");
    Dataset ds;
    try {
        require(manifest.at("schema_version").get<int>() == kDatasetSchemaVersion, ErrorKind::validation,
                "unsupported dataset schema version");
        ds.kind = source_from_string(manifest.at("kind").get<std::string>());
        ds.image_size = manifest.at("image_size").get<int>();
        ds.seed = manifest.at("seed").get<std::uint64_t>();
        ds.params = structure::canny_params_from_json(manifest.at("params"));
        ds.stats.attempts = manifest.at("attempts").get<long>();
        ds.stats.accepted = manifest.at("accepted").get<long>();
        for (const auto& [k, v] : manifest.at("reject_reasons").items()) ds.stats.reasons[k] = v.get<long>();
        const auto count = manifest.at("count").get<std::size_t>();
        for (std::size_t i = 0; i < count; ++i) {
            const auto rd = dir / "records" / record_id(i);
            const auto meta = read_json(rd / "meta.json");
            DatasetRecord r;
            r.id = meta.at("id").get<std::string>();
            r.prompt = meta.at("prompt").get<std::string>();
            r.prompt_id = meta.at("prompt_id").get<int>();
            r.tokens = meta.at("token_ids").get<TokenIds>();
            r.text_content = meta.at("text_content").get<std::string>();
            r.spec = scene_from_json(meta.at("spec"));
            r.params = structure::canny_params_from_json(meta.at("params"));
            r.seed = meta.at("seed").get<std::uint64_t>();
            r.source = source_from_string(meta.at("source_dataset").get<std::string>());
            r.src = to_bytes(png::read(rd / "src.png"));
            r.tgt = to_bytes(png::read(rd / "tgt.png"));
            r.edges = structure::unremap(structure::load_canny(rd / "canny.png"));
            ds.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::validation, std::string("malformed dataset metadata: ") + e.what());
    }
    return ds;
}

struct ValidationReport {
    std::size_t checked = 0;
    std::vector<std::string> problems;
    bool ok() const { return problems.empty(); }
};

/// Re-derives every record invariant: the stored Canny target matches a recomputation under the
/// recorded params, prompt tokens match the template, and texting records read back their text
/// from both views.
inline ValidationReport validate_dataset(const Dataset& ds) {
    const GlyphAlphabet alphabet;
    ValidationReport rep;
    for (const auto& r : ds.records) {
        ++rep.checked;
        auto problem = [&](const std::string& what) { rep.problems.push_back(r.id + ": " + what); };
        const ImageGrid tgt = r.tgt_image();
        if (structure::canny(tgt, r.params) != r.edges) problem("canny target differs from recomputation");
        if (!structure::is_two_valued(r.canny().values)) problem("canny target not two-valued");
        if (r.source != ds.kind) problem("source_dataset tag differs from dataset kind");
        if (r.prompt_id < 0 || r.prompt_id >= static_cast<int>(kPromptTemplates.size()) ||
            r.prompt != prompt_template(r.prompt_id).text)
            problem("prompt does not match its template");
        if (r.tokens != tokenize(r.prompt)) problem("token ids do not match prompt");
        if (r.source == SourceDataset::texting) {
            if (r.text_content.empty()) problem("texting record without text");
            const auto a = ocr(r.src_image(), alphabet), b = ocr(tgt, alphabet);
            if (a.text != r.text_content || b.text != r.text_content) problem("OCR does not reproduce text_content");
        } else if (!r.text_content.empty()) {
            problem("generic record carries text");
        }
    }
    return rep;
}

/// Draws records i.i.d. across datasets by the given ratios; within a dataset, records are visited
/// in shuffled epochs.
class MixedSampler {
public:
    MixedSampler(std::vector<const std::vector<DatasetRecord>*> sets, std::vector<double> ratios, std::uint64_t seed)
        : sets_(std::move(sets)), ratios_(std::move(ratios)), rng_(make_rng(seed, 99)) {
        require(sets_.size() == ratios_.size() && !sets_.empty(), ErrorKind::config,
                "mixed sampler needs one ratio per dataset");
        double sum = 0.0;
        for (std::size_t i = 0; i < ratios_.size(); ++i) {
            require(ratios_[i] >= 0.0, ErrorKind::config, "mix ratios must be nonnegative");
            if (ratios_[i] > 0.0) require(!sets_[i]->empty(), ErrorKind::config, "mix ratio on an empty dataset");
            sum += ratios_[i];
        }
        require(std::abs(sum - 1.0) < 1e-9, ErrorKind::config, "mix ratios must sum to 1");
        order_.resize(sets_.size());
        cursor_.assign(sets_.size(), 0);
        for (std::size_t i = 0; i < sets_.size(); ++i) reshuffle(i);
    }

    struct Draw {
        std::size_t dataset;
        const DatasetRecord* record;
    };

    Draw next() {
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
        std::size_t pick = 0;
        double acc = 0.0;
        for (; pick < ratios_.size(); ++pick) {
            acc += ratios_[pick];
            if (u < acc && ratios_[pick] > 0.0) break;
        }
        if (pick == ratios_.size()) {  // rounding at the top end
            pick = ratios_.size() - 1;
            while (ratios_[pick] <= 0.0) --pick;
        }
        if (cursor_[pick] >= order_[pick].size()) reshuffle(pick);
        return {pick, &(*sets_[pick])[order_[pick][cursor_[pick]++]]};
    }

private:
    void reshuffle(std::size_t i) {
        order_[i].resize(sets_[i]->size());
        for (std::size_t k = 0; k < order_[i].size(); ++k) order_[i][k] = k;
        std::shuffle(order_[i].begin(), order_[i].end(), rng_);
        cursor_[i] = 0;
    }

    std::vector<const std::vector<DatasetRecord>*> sets_;
    std::vector<double> ratios_;
    Rng rng_;
    std::vector<std::vector<std::size_t>> order_;
    std::vector<std::size_t> cursor_;
};

}  // namespace structgen::datagen
