// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "structgen/cli/app.hpp"
#include "support.hpp"

using namespace structgen;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::parse_and_dispatch(std::move(args), out, err);
    return {code, out.str(), err.str()};
}

/// Small backbone and short schedules so every command finishes in seconds.
std::vector<std::string> small_sets() {
    return {"--set", "backbone.patch_size=16", "--set", "backbone.width=32", "--set", "backbone.depth=1",
            "--set", "backbone.heads=2",       "--set", "lora.rank=2",       "--set", "train.batch=1", "--set", "data.mix=1",
            "--set", "sampler.steps=2",        "--set", "train.log_every=0"};
}

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

/// Built once per process; the tests only read it.
const fs::path& dataset_dir() {
    static sgtest::TempDir dir("cli_data");
    static const bool built = [] {
        const Outcome r = run({"build-dataset", "--kind", "texting", "--n", "3", "--seed", "5", "--out", (dir.path / "ds").string()});
        EXPECT_EQ(r.code, 0) << r.err;
        return true;
    }();
    (void)built;
    static const fs::path p = dir.path / "ds";
    return p;
}

}  // namespace

TEST(Cli, HelpListsKeysAndExitsZero) {
    const Outcome r = run({"--help"});
    EXPECT_EQ(r.code, 0);
    for (const char* key : {"train.lr", "lora.rank", "data.mix", "sampler.steps", "canny.sigma", "vlm.client"})
        EXPECT_NE(r.out.find(key), std::string::npos) << key;
    for (const char* sub : {"build-dataset", "validate-dataset", "train-stage1", "train-stage2", "infer", "eval"})
        EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({"build-dataset", "--kind", "texting"}).code, 2);
    EXPECT_EQ(run({"build-dataset", "--kind", "poetry", "--n", "1", "--seed", "1", "--out", "x"}).code, 2);
    EXPECT_EQ(run({"validate-dataset", "--data", "x", "--bogus"}).code, 2);
    sgtest::TempDir dir("cli_usage");
    EXPECT_EQ(run({"build-dataset", "--kind", "generic", "--n", "1", "--seed", "1", "--out", dir.path.string(), "--set", "noequals"}).code,
              2);
}

TEST(Cli, ConfigErrorsExitThreeWithKeyName) {
    sgtest::TempDir dir("cli_cfg");
    const Outcome r = run({"build-dataset", "--kind", "generic", "--n", "1", "--seed", "1", "--out", dir.path.string(), "--set",
                       "train.learning_rate=1"});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("train.learning_rate"), std::string::npos);
    const Outcome bad_type = run({"build-dataset", "--kind", "generic", "--n", "1", "--seed", "1", "--out", dir.path.string(),
                              "--set", "canny.sigma=wide"});
    EXPECT_EQ(bad_type.code, 3);
    std::ofstream(dir.path / "broken.json") << "{ not json";
    EXPECT_EQ(run({"build-dataset", "--kind", "generic", "--n", "1", "--seed", "1", "--out", dir.path.string(), "--config",
                   (dir.path / "broken.json").string()})
                  .code,
              3);
}

TEST(Cli, BuildThenValidate) {
    const fs::path& ds = dataset_dir();
    EXPECT_TRUE(fs::exists(ds / "manifest.json"));
    EXPECT_TRUE(fs::exists(ds / "resolved_config.json"));
    EXPECT_TRUE(fs::exists(ds / "run.json"));
    EXPECT_EQ(run({"validate-dataset", "--data", ds.string()}).code, 0);
}

TEST(Cli, DataErrorsExitFourIoErrorsExitSix) {
    sgtest::TempDir dir("cli_bad");
    EXPECT_EQ(run({"validate-dataset", "--data", (dir.path / "missing").string()}).code, 6);
    fs::copy(dataset_dir(), dir.path / "copy", fs::copy_options::recursive);
    // Flip one byte of a stored canny map.
    for (const auto& e : fs::recursive_directory_iterator(dir.path / "copy" / "records"))
        if (e.path().filename() == "canny.png") {
            ImageGrid g = png::read(e.path());
            g(10, 10, 0) = g(10, 10, 0) > 0.5 ? 0.2 : 0.8;
            g(10, 10, 1) = g(10, 10, 2) = g(10, 10, 0);
            png::write(e.path(), g);
            break;
        }
    EXPECT_EQ(run({"validate-dataset", "--data", (dir.path / "copy").string()}).code, 4);
}

TEST(Cli, FlagsOverrideFileOverrideDefaults) {
    sgtest::TempDir dir("cli_prec");
    std::ofstream(dir.path / "cfg.json") << R"({"train.steps": 2, "train.lr": 0.5})";
    const auto base = with({"train-stage1", "--data", dataset_dir().string(), "--config", (dir.path / "cfg.json").string()},
                           small_sets());
    Outcome r = run(with(base, {"--out", (dir.path / "a" / "t1.bin").string()}));
    ASSERT_EQ(r.code, 0) << r.err;
    auto cfg = datagen::read_json(dir.path / "a" / "resolved_config.json");
    EXPECT_EQ(cfg["train.steps"], 2);
    EXPECT_EQ(cfg["train.lr"], 0.5);
    EXPECT_EQ(cfg["train.batch"], 1);
    EXPECT_EQ(cfg["train.momentum"], 0.9);
    r = run(with(base, {"--out", (dir.path / "b" / "t1.bin").string(), "--set", "train.steps=1"}));
    ASSERT_EQ(r.code, 0) << r.err;
    cfg = datagen::read_json(dir.path / "b" / "resolved_config.json");
    EXPECT_EQ(cfg["train.steps"], 1);
    EXPECT_EQ(cfg["train.lr"], 0.5);
    EXPECT_EQ(datagen::read_json(dir.path / "b" / "run.json")["command"], "train-stage1");
}

TEST(Cli, TrainInferEvalAndSnapshotReload) {
    sgtest::TempDir dir("cli_flow");
    const std::string ds = dataset_dir().string();
    const auto sets = with(small_sets(), {"--set", "train.steps=2"});
    ASSERT_EQ(run(with({"train-stage1", "--data", ds, "--out", (dir.path / "t1.bin").string()}, sets)).code, 0);
    ASSERT_EQ(run(with({"train-stage2", "--data", ds, "--out", (dir.path / "t2.bin").string()}, sets)).code, 0);
    EXPECT_TRUE(fs::exists(dir.path / "t1.bin.json"));
    EXPECT_TRUE(fs::exists(dir.path / "t1.bin.loss.csv"));

    const std::string src = (dataset_dir() / "records" / "000000" / "src.png").string();
    auto infer = [&](const fs::path& out, std::vector<std::string> extra) {
        return run(with(with({"infer", "--src", src, "--prompt-id", "0", "--theta1", (dir.path / "t1.bin").string(), "--theta2",
                              (dir.path / "t2.bin").string(), "--out-dir", out.string()},
                             sets),
                        extra));
    };
    ASSERT_EQ(infer(dir.path / "i1", {}).code, 0);
    ASSERT_EQ(infer(dir.path / "i2", {}).code, 0);
    for (const char* f : {"canny_pred.png", "final.png"})
        EXPECT_EQ(png::encode(png::read(dir.path / "i1" / f)), png::encode(png::read(dir.path / "i2" / f))) << f;

    // Replaying the snapshot alone reproduces the run.
    const fs::path snap = dir.path / "i1" / "resolved_config.json";
    const Outcome replay = run({"infer", "--src", src, "--prompt-id", "0", "--theta1", (dir.path / "t1.bin").string(), "--theta2",
                            (dir.path / "t2.bin").string(), "--out-dir", (dir.path / "i3").string(), "--config", snap.string()});
    ASSERT_EQ(replay.code, 0) << replay.err;
    EXPECT_EQ(png::encode(png::read(dir.path / "i1" / "final.png")), png::encode(png::read(dir.path / "i3" / "final.png")));

    // An adapter trained against another backbone is refused.
    EXPECT_EQ(infer(dir.path / "i4", {"--set", "backbone.seed=9"}).code, 3);
    // Stage mix-up is refused.
    EXPECT_EQ(run(with({"infer", "--src", src, "--prompt-id", "0", "--theta1", (dir.path / "t2.bin").string(), "--theta2",
                        (dir.path / "t2.bin").string(), "--out-dir", (dir.path / "i5").string()},
                       sets))
                  .code,
              3);

    const Outcome ev = run(with({"eval", "--kind", "subject", "--data", ds, "--theta1", (dir.path / "t1.bin").string(), "--theta2",
                             (dir.path / "t2.bin").string(), "--out", (dir.path / "ev").string(), "--limit", "2"},
                            sets));
    ASSERT_EQ(ev.code, 0) << ev.err;
    const auto rep = eval::load_report(dir.path / "ev" / "report.json");
    EXPECT_EQ(rep.metrics.at("count"), 2.0);
    EXPECT_EQ(rep.metrics.at("vlm_scored"), 2.0);
    EXPECT_TRUE(fs::exists(dir.path / "ev" / "rows.csv"));
    EXPECT_TRUE(fs::exists(dir.path / "ev" / "resolved_config.json"));
}

TEST(Cli, DivergentTrainingExitsFive) {
    sgtest::TempDir dir("cli_div");
    const Outcome r = run(with({"train-stage1", "--data", dataset_dir().string(), "--out", (dir.path / "t.bin").string()},
                           with(small_sets(), {"--set", "train.steps=20", "--set", "train.lr=1e30"})));
    EXPECT_EQ(r.code, 5) << r.err;
}

TEST(Cli, BinaryReportsExitCodes) {
    const std::string bin = STRUCTGEN_CLI_PATH;
    auto status = [&](const std::string& args) {
        const int s = std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
        return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
    };
    EXPECT_EQ(status("--help"), 0);
    EXPECT_EQ(status("--no-such-flag"), 2);
    EXPECT_EQ(status("validate-dataset --data " + dataset_dir().string()), 0);
}
