// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "structgen/cli/config.hpp"
#include "structgen/eval/report.hpp"
#include "structgen/eval/vlm_http.hpp"
#include "structgen/pipeline/infer.hpp"
#include "structgen/pipeline/train.hpp"

namespace structgen::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kConfig = 3, kData = 4, kTraining = 5, kIo = 6 };

inline int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::usage: return kUsage;
        case ErrorKind::config:
        case ErrorKind::encoding: return kConfig;
        case ErrorKind::training:
        case ErrorKind::integration: return kTraining;
        case ErrorKind::io: return kIo;
        default: return kData;
    }
}

/// Options shared by every subcommand.
struct Common {
    std::string config_file;
    std::vector<std::string> sets;

    void attach(CLI::App* sub) {
        sub->add_option("--config", config_file, "flat JSON config file (dotted keys)");
        sub->add_option("--set", sets, "override one key: --set key=value (repeatable)");
    }

    /// Resolves defaults < file < --set < explicit flags.
    Json resolve(const std::vector<std::pair<std::string, std::string>>& explicit_flags = {}) const {
        std::vector<std::pair<std::string, std::string>> flags;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) fail(ErrorKind::usage, "--set expects key=value, got '" + s + "'");
            flags.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        flags.insert(flags.end(), explicit_flags.begin(), explicit_flags.end());
        return resolve_config(default_config(), config_file.empty() ? Json() : load_config_file(config_file), flags);
    }
};

inline void write_snapshot(const fs::path& dir, const Json& config, const std::string& command, const Json& args) {
    fs::create_directories(dir);
    datagen::write_json(dir / "resolved_config.json", config);
    datagen::write_json(dir / "run.json", {{"command", command}, {"args", args}});
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) out.push_back(part);
    return out;
}

inline datagen::Dataset load_validated(const fs::path& dir) {
    datagen::Dataset ds = datagen::load_dataset(dir);
    const auto rep = datagen::validate_dataset(ds);
    if (!rep.ok()) fail(ErrorKind::validation, dir.string() + ": " + rep.problems.front());
    return ds;
}

/// Adapter sidecar: stage, rank and the backbone it was trained against.
inline void write_adapter_sidecar(const fs::path& adapter_path, const lora::AdapterSet<double>& a,
                                  const backbone::BackboneWeights<double>& w) {
    datagen::write_json(fs::path(adapter_path.string() + ".json"),
                        {{"stage", lora::to_string(a.stage)},
                         {"rank", a.rank},
                         {"backbone_checksum", w.checksum()},
                         {"backbone_seed", w.seed},
                         {"backbone", backbone::to_kv(w.config)}});
}

inline lora::AdapterSet<double> load_adapter_checked(const fs::path& path, const backbone::BackboneWeights<double>& w,
                                                     lora::Stage want) {
    auto a = lora::load_adapter<double>(path, w.config);
    require(a.stage == want, ErrorKind::config,
            path.string() + " holds a " + lora::to_string(a.stage) + " adapter, expected " + lora::to_string(want));
    const fs::path side(path.string() + ".json");
    if (fs::exists(side)) {
        const Json j = datagen::read_json(side);
        require(j.at("backbone_checksum").get<std::uint64_t>() == w.checksum(), ErrorKind::config,
                path.string() + " was trained against a different backbone (check backbone.* keys)");
    }
    return a;
}

inline std::unique_ptr<eval::VlmClient> make_vlm_client(const Json& c, const std::string& which) {
    if (which == "mock") return std::make_unique<eval::MockVlmClient>();
    if (which == "http") {
        eval::VlmHttpConfig h;
        h.endpoint = c.at("vlm.endpoint").get<std::string>();
        h.model = c.at("vlm.model").get<std::string>();
        h.token_env = c.at("vlm.token_env").get<std::string>();
        h.timeout_s = c.at("vlm.timeout_s").get<int>();
        require(!h.endpoint.empty(), ErrorKind::config, "vlm.endpoint is required for --vlm http");
        return std::make_unique<eval::HttpVlmClient>(h);
    }
    if (which == "none") return nullptr;
    fail(ErrorKind::usage, "--vlm must be mock, http or none");
}

inline int run_build_dataset(const Common& common, const std::string& kind, int n, std::uint64_t seed, const fs::path& out,
                             int workers, std::ostream& log) {
    std::vector<std::pair<std::string, std::string>> flags;
    if (workers > 0) flags.emplace_back("workers", std::to_string(workers));
    const Json c = common.resolve(flags);
    require(n >= 1, ErrorKind::config, "--n must be >= 1");
    const auto src = datagen::source_from_string(kind);
    const auto ds = datagen::build_dataset(src, n, seed, build_options(c));
    datagen::write_dataset(ds, out);
    write_snapshot(out, c, "build-dataset", {{"kind", kind}, {"n", n}, {"seed", seed}});
    log << "built " << ds.records.size() << " " << kind << " records in " << out.string() << " (acceptance rate "
        << ds.stats.acceptance_rate() << ")\n";
    return kOk;
}

inline int run_validate(const fs::path& dir, std::ostream& log) {
    const auto ds = datagen::load_dataset(dir);
    const auto rep = datagen::validate_dataset(ds);
    log << "checked " << rep.checked << " records, " << rep.problems.size() << " problems\n";
    for (const auto& p : rep.problems) log << "  " << p << "\n";
    return rep.ok() ? kOk : kData;
}

inline int run_train(lora::Stage stage, const Common& common, const std::string& data, const std::string& mix,
                     const fs::path& out, std::ostream& log) {
    std::vector<std::pair<std::string, std::string>> flags;
    if (!mix.empty()) flags.emplace_back("data.mix", mix);
    const Json c = common.resolve(flags);
    const auto tc = train_config(c);
    const auto dirs = split_list(data);
    require(!dirs.empty(), ErrorKind::usage, "--data needs at least one dataset directory");
    std::vector<datagen::Dataset> sets;
    for (const auto& d : dirs) sets.push_back(load_validated(d));
    std::vector<const std::vector<datagen::DatasetRecord>*> views;
    for (const auto& s : sets) views.push_back(&s.records);

    const auto wd = backbone::init_backbone(backbone_config(c), c.at("backbone.seed").get<std::uint64_t>());
    const auto w = wd.cast<float>();
    const int every = tc.log_every;
    pipeline::ProgressFn progress = [&](int step, double loss) {
        if (every > 0 && (step % every == 0 || step + 1 == tc.steps)) log << "step " << step << " loss " << loss << "\n";
    };
    const auto res = pipeline::train_stage<float>(stage, views, tc, w, nullptr, progress);

    const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    fs::create_directories(dir);
    lora::save_adapter(out, res.adapter);
    write_adapter_sidecar(out, res.adapter, wd);
    pipeline::write_loss_trace(fs::path(out.string() + ".loss.csv"), res.losses);
    write_snapshot(dir, c, stage == lora::Stage::stage1 ? "train-stage1" : "train-stage2",
                   {{"data", dirs}, {"out", out.filename().string()}});
    log << "trained " << lora::to_string(stage) << " in " << res.seconds << " s, wrote " << out.string() << "\n";
    return kOk;
}

inline int run_infer(const Common& common, const fs::path& src_png, int prompt_id, const fs::path& t1, const fs::path& t2,
                     const fs::path& out_dir, std::ostream& log) {
    const Json c = common.resolve();
    const auto wd = backbone::init_backbone(backbone_config(c), c.at("backbone.seed").get<std::uint64_t>());
    const auto w = wd.cast<float>();
    const auto theta1 = load_adapter_checked(t1, wd, lora::Stage::stage1).cast<float>();
    const auto theta2 = load_adapter_checked(t2, wd, lora::Stage::stage2).cast<float>();
    ImageGrid src = png::read(src_png);
    require(src.channels == 3, ErrorKind::validation, "--src must be an RGB png");
    const auto& tmpl = datagen::prompt_template(prompt_id);
    const auto tokens = datagen::tokenize(tmpl.text);
    const auto r = pipeline::infer(src, tokens, w, theta1, theta2, sampler_config(c));
    pipeline::write_inference(out_dir, r, {{"prompt_id", prompt_id}, {"prompt", std::string(tmpl.text)}, {"tokens", tokens}});
    write_snapshot(out_dir, c, "infer",
                   {{"src", src_png.string()}, {"prompt_id", prompt_id}, {"theta1", t1.string()}, {"theta2", t2.string()}});
    log << "wrote " << (out_dir / "final.png").string() << "\n";
    return kOk;
}

inline int run_eval(const Common& common, const std::string& kind, const fs::path& data, const fs::path& t1,
                    const std::string& t2, const fs::path& out, const std::string& vlm, int limit, std::ostream& log) {
    const Json c = common.resolve();
    const auto ec = eval_config(c);
    const auto ds = load_validated(data);
    std::vector<datagen::DatasetRecord> records = ds.records;
    if (limit > 0 && static_cast<std::size_t>(limit) < records.size()) records.resize(static_cast<std::size_t>(limit));
    const auto wd = backbone::init_backbone(backbone_config(c), c.at("backbone.seed").get<std::uint64_t>());
    const auto w = wd.cast<float>();
    const auto theta1 = load_adapter_checked(t1, wd, lora::Stage::stage1).cast<float>();

    eval::EvalReport rep;
    if (kind == "reconstruction") {
        rep = eval::run_reconstruction_eval(records, w, theta1, ec);
    } else if (kind == "subject" || kind == "ocr") {
        require(!t2.empty(), ErrorKind::usage, "--theta2 is required for eval --kind " + kind);
        const auto theta2 = load_adapter_checked(t2, wd, lora::Stage::stage2).cast<float>();
        eval::Generator gen = [&](const ImageGrid& src, const datagen::TokenIds& tokens, std::uint64_t seed) {
            flow::SamplerConfig s = ec.sampler;
            s.seed = seed;
            return pipeline::infer(src, tokens, w, theta1, theta2, s);
        };
        if (kind == "subject") {
            auto client = make_vlm_client(c, vlm);
            rep = eval::run_generation_eval(records, gen, client.get(), ec);
            rep.kind = "subject";
        } else {
            rep = eval::run_ocr_eval(records, gen, ec);
        }
        rep.run_id = eval::make_run_id(rep.config, theta1.checksum() ^ theta2.checksum() ^ w.checksum());
    } else {
        fail(ErrorKind::usage, "--kind must be reconstruction, subject or ocr");
    }
    eval::emit_report(rep, out);
    write_snapshot(out, c, "eval", {{"kind", kind}, {"data", data.string()}, {"theta1", t1.string()}, {"theta2", t2}, {"vlm", vlm}, {"limit", limit}});
    for (const auto& [k, v] : rep.metrics) log << k << " = " << v << "\n";
    return kOk;
}

/// Entry point for the `structgen` tool. Returns the process exit code.
inline int parse_and_dispatch(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"structgen: two-stage structure-then-render generation toolkit"};
    app.require_subcommand(1);
    app.footer(describe_keys());
    Common common;

    std::string kind, data, mix, prompt_src, theta1, theta2, vlm = "mock";
    std::string out_path;
    int n = 0, workers = 0, prompt_id = 0, limit = 0;
    std::uint64_t seed = 0;

    auto* build = app.add_subcommand("build-dataset", "render, view-synthesize, OCR-filter and write a paired dataset");
    build->add_option("--kind", kind, "texting or generic")->required()->check(CLI::IsMember({"texting", "generic"}));
    build->add_option("--n", n, "accepted records to produce")->required();
    build->add_option("--seed", seed, "dataset seed")->required();
    build->add_option("--out", out_path, "output directory")->required();
    build->add_option("--workers", workers, "worker threads (overrides the workers key)");
    common.attach(build);

    auto* validate = app.add_subcommand("validate-dataset", "recompute every record's invariants");
    validate->add_option("--data", data, "dataset directory")->required();

    auto* train1 = app.add_subcommand("train-stage1", "train the structure-prediction adapter");
    auto* train2 = app.add_subcommand("train-stage2", "train the rendering adapter (ground-truth canny conditioning)");
    for (auto* t : {train1, train2}) {
        t->add_option("--data", data, "dataset directories, comma separated")->required();
        t->add_option("--mix", mix, "per-dataset ratios, comma separated (data.mix)");
        t->add_option("--out", out_path, "adapter blob to write")->required();
        common.attach(t);
    }

    auto* infer = app.add_subcommand("infer", "two-stage inference for one source image");
    infer->add_option("--src", prompt_src, "source RGB png")->required();
    infer->add_option("--prompt-id", prompt_id, "prompt template id (0 = neutral)")->required();
    infer->add_option("--theta1", theta1, "stage-1 adapter")->required();
    infer->add_option("--theta2", theta2, "stage-2 adapter")->required();
    infer->add_option("--out-dir", out_path, "output directory")->required();
    common.attach(infer);

    auto* ev = app.add_subcommand("eval", "reconstruction, subject (VLM) or OCR evaluation");
    ev->add_option("--kind", kind, "reconstruction, subject or ocr")->required()->check(CLI::IsMember({"reconstruction", "subject", "ocr"}));
    ev->add_option("--data", data, "held-out dataset directory")->required();
    ev->add_option("--theta1", theta1, "stage-1 adapter")->required();
    ev->add_option("--theta2", theta2, "stage-2 adapter (subject, ocr)");
    ev->add_option("--out", out_path, "report directory")->required();
    ev->add_option("--vlm", vlm, "mock, http or none")->check(CLI::IsMember({"mock", "http", "none"}));
    ev->add_option("--limit", limit, "evaluate only the first N records");
    common.attach(ev);

    std::vector<const char*> argv{"structgen"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        err << "run with --help for usage\n";
        return kUsage;
    }

    try {
        if (*build) return run_build_dataset(common, kind, n, seed, out_path, workers, err);
        if (*validate) return run_validate(data, err);
        if (*train1) return run_train(lora::Stage::stage1, common, data, mix, out_path, err);
        if (*train2) return run_train(lora::Stage::stage2, common, data, mix, out_path, err);
        if (*infer) return run_infer(common, prompt_src, prompt_id, theta1, theta2, out_path, err);
        if (*ev) return run_eval(common, kind, data, theta1, theta2, out_path, vlm, limit, err);
    } catch (const Error& e) {
        err << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "io error: " << e.what() << "\n";
        return kIo;
    } catch (const nlohmann::json::exception& e) {
        err << "configuration error: " << e.what() << "\n";
        return kConfig;
    }
    return kUsage;
}

inline int parse_and_dispatch(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return parse_and_dispatch(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace structgen::cli
