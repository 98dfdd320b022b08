// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "structgen/pipeline/infer.hpp"
#include "structgen/pipeline/train.hpp"
#include "support.hpp"

using namespace structgen;
using namespace structgen::pipeline;
using datagen::DatasetRecord;

namespace {

BackboneConfig small() {
    BackboneConfig c;
    c.patch_size = 16;
    c.width = 32;
    c.depth = 1;
    c.heads = 2;
    c.mlp_ratio = 2;
    return c;
}

const std::vector<DatasetRecord>& generic() {
    static const auto ds = datagen::build_dataset(datagen::SourceDataset::generic, 12, 3).records;
    return ds;
}

const std::vector<DatasetRecord>& texting() {
    static const auto ds = datagen::build_dataset(datagen::SourceDataset::texting, 4, 3).records;
    return ds;
}

TrainConfig quick(int steps) {
    TrainConfig t;
    t.batch = 2;
    t.steps = steps;
    t.rank = 2;
    t.sampler_steps = 4;
    return t;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::usage;  // sentinel: nothing thrown
}

}  // namespace

TEST(Conditioning, StreamCountsAndProvenanceContracts) {
    const auto w = backbone::init_backbone(small(), 1);
    const DatasetRecord& r = generic()[0];
    const ImageGrid src = r.src_image();
    const CannyMap gt = r.canny();
    const auto c1 = make_conditioning<double>(Stage::stage1, src, r.tokens, nullptr, w);
    ASSERT_EQ(c1.streams.size(), 2u);
    EXPECT_FALSE(c1.canny_source.has_value());
    const auto c2 = make_conditioning<double>(Stage::stage2, src, r.tokens, &gt, w, Phase::train_stage2);
    ASSERT_EQ(c2.streams.size(), 3u);
    EXPECT_EQ(c2.streams[2].roles.front(), backbone::Role::canny_cond);
    EXPECT_EQ(c2, make_conditioning<double>(Stage::stage2, src, r.tokens, &gt, w, Phase::train_stage2));

    EXPECT_EQ(kind_of([&] { make_conditioning<double>(Stage::stage1, src, r.tokens, &gt, w); }), ErrorKind::contract);
    EXPECT_EQ(kind_of([&] { make_conditioning<double>(Stage::stage2, src, r.tokens, nullptr, w); }), ErrorKind::contract);
    const CannyMap bin = structure::binarize_prediction(gt);
    EXPECT_EQ(kind_of([&] { make_conditioning<double>(Stage::stage2, src, r.tokens, &bin, w, Phase::train_stage2); }),
              ErrorKind::contract);
    EXPECT_EQ(kind_of([&] { make_conditioning<double>(Stage::stage2, src, r.tokens, &gt, w, Phase::infer_stage2); }),
              ErrorKind::contract);
    CannyMap raw = gt;
    raw.kind = CannyKind::predicted;
    EXPECT_EQ(kind_of([&] { make_conditioning<double>(Stage::stage2, src, r.tokens, &raw, w); }), ErrorKind::contract);
}

TEST(Train, StageOneTargetsAreTwoValued) {
    const auto w = backbone::init_backbone(small(), 1);
    for (const auto& r : texting()) {
        const auto ex = make_example<double>(Stage::stage1, r, w, nullptr);
        EXPECT_TRUE(structure::is_two_valued(ex.x1));
        EXPECT_EQ(ex.cond.streams.size(), 2u);
    }
}

TEST(Train, ZeroLearningRateLeavesAdapterUnchanged) {
    const auto w = backbone::init_backbone(small(), 1).cast<float>();
    TrainConfig cfg = quick(0);
    cfg.lr = 0.0;
    cfg.mix = {1.0};
    const auto before = train_stage1<float>({&generic()}, cfg, w);
    cfg.steps = 5;
    const auto after = train_stage1<float>({&generic()}, cfg, w);
    EXPECT_EQ(after.adapter.checksum(), before.adapter.checksum());
    EXPECT_EQ(after.losses.size(), 5u);
}

TEST(Train, BackboneChecksumUnchanged) {
    const auto w = backbone::init_backbone(small(), 2).cast<float>();
    const auto sum = w.checksum();
    TrainConfig cfg = quick(20);
    cfg.mix = {0.5, 0.5};
    const auto r = train_stage2<float>({&generic(), &texting()}, cfg, w);
    EXPECT_EQ(w.checksum(), sum);
    EXPECT_NE(r.adapter.checksum(), lora::init_adapter_set(small(), 2, Stage::stage2, 0).checksum());
}

TEST(Train, LossDecreasesOnSmallConfig) {
    const auto w = backbone::init_backbone(small(), 3).cast<float>();
    TrainConfig cfg = quick(500);
    cfg.batch = 4;
    cfg.optimizer = "adam";
    cfg.lr = 3e-3;
    cfg.mix = {1.0};
    const auto r = train_stage1<float>({&generic()}, cfg, w);
    ASSERT_EQ(r.losses.size(), 500u);
    const double first = window_mean(r.losses, 0, 50), last = window_mean(r.losses, 450, 50);
    EXPECT_LT(last, 0.8 * first) << first << " -> " << last;
}

TEST(Train, ConfigErrors) {
    const auto w = backbone::init_backbone(small(), 1).cast<float>();
    TrainConfig cfg = quick(1);
    cfg.mix = {0.7, 0.2};
    EXPECT_EQ(kind_of([&] { train_stage1<float>({&generic(), &texting()}, cfg, w); }), ErrorKind::config);
    cfg.mix = {1.0};
    EXPECT_EQ(kind_of([&] { train_stage1<float>({&generic(), &texting()}, cfg, w); }), ErrorKind::config);
    cfg.optimizer = "lbfgs";
    EXPECT_EQ(kind_of([&] { train_stage1<float>({&generic()}, cfg, w); }), ErrorKind::config);
}

TEST(Provenance, TrainingUsesGroundTruthInferenceUsesBinarized) {
    const auto w = backbone::init_backbone(small(), 4).cast<float>();
    ProvenanceAudit audit;
    TrainConfig cfg = quick(3);
    cfg.mix = {1.0};
    const auto t1 = train_stage1<float>({&texting()}, cfg, w, &audit);
    const auto t2 = train_stage2<float>({&texting()}, cfg, w, &audit);
    EXPECT_EQ(audit.count(Phase::train_stage2, CannyKind::ground_truth), 6);
    EXPECT_EQ(audit.total(Phase::train_stage2), 6);
    EXPECT_EQ(audit.total(Phase::train_stage1), 0);

    const DatasetRecord& r = texting()[0];
    flow::SamplerConfig s;
    s.steps = 4;
    infer<float>(r.src_image(), r.tokens, w, t1.adapter.cast<float>(), t2.adapter.cast<float>(), s, &audit);
    EXPECT_EQ(audit.count(Phase::infer_stage2, CannyKind::binarized), 1);
    EXPECT_EQ(audit.total(Phase::infer_stage2), 1);
}

TEST(Infer, DeterministicAndTwoValuedCanny) {
    const auto w = backbone::init_backbone(small(), 5).cast<float>();
    const auto a1 = lora::init_adapter_set(small(), 2, Stage::stage1, 1).cast<float>();
    const auto a2 = lora::init_adapter_set(small(), 2, Stage::stage2, 1).cast<float>();
    const DatasetRecord& r = generic()[1];
    flow::SamplerConfig s;
    s.steps = 4;
    s.seed = 77;
    const InferResult x = infer<float>(r.src_image(), r.tokens, w, a1, a2, s);
    const InferResult y = infer<float>(r.src_image(), r.tokens, w, a1, a2, s);
    EXPECT_EQ(png::encode(x.canny_binarized.values), png::encode(y.canny_binarized.values));
    EXPECT_EQ(png::encode(clip01(x.final_image)), png::encode(clip01(y.final_image)));
    EXPECT_TRUE(structure::is_two_valued(x.canny_binarized.values));
    EXPECT_EQ(x.canny_predicted.kind, CannyKind::predicted);
    EXPECT_NE(x.stage1_seed, x.stage2_seed);
    s.seed = 78;
    EXPECT_NE(png::encode(clip01(infer<float>(r.src_image(), r.tokens, w, a1, a2, s).final_image)),
              png::encode(clip01(x.final_image)));
}

TEST(Infer, StageMismatchIsContractError) {
    const auto w = backbone::init_backbone(small(), 5).cast<float>();
    const auto a1 = lora::init_adapter_set(small(), 2, Stage::stage1, 1).cast<float>();
    const DatasetRecord& r = generic()[1];
    EXPECT_EQ(kind_of([&] { infer<float>(r.src_image(), r.tokens, w, a1, a1, flow::SamplerConfig{}); }), ErrorKind::contract);
    const auto a2 = lora::init_adapter_set(small(), 2, Stage::stage2, 1).cast<float>();
    EXPECT_EQ(kind_of([&] { infer_stage1<float>(r.src_image(), r.tokens, w, a2, flow::SamplerConfig{}); }), ErrorKind::contract);
}

TEST(Infer, AdaptersAreIsolated) {
    const auto w = backbone::init_backbone(small(), 6).cast<float>();
    TrainConfig cfg = quick(5);
    cfg.mix = {1.0};
    cfg.lr = 1e-2;
    const auto t1 = train_stage1<float>({&generic()}, cfg, w);
    const auto sum1 = t1.adapter.checksum();
    const auto t2 = train_stage2<float>({&generic()}, cfg, w);
    EXPECT_EQ(t1.adapter.checksum(), sum1);
    // The stage-1 prediction does not depend on which stage-2 adapter is attached.
    const DatasetRecord& r = generic()[2];
    flow::SamplerConfig s;
    s.steps = 4;
    const auto zero2 = lora::init_adapter_set(small(), 2, Stage::stage2, 9).cast<float>();
    const auto a = infer<float>(r.src_image(), r.tokens, w, t1.adapter.cast<float>(), t2.adapter.cast<float>(), s);
    const auto b = infer<float>(r.src_image(), r.tokens, w, t1.adapter.cast<float>(), zero2, s);
    EXPECT_EQ(a.canny_predicted, b.canny_predicted);
}

TEST(Infer, WritesArtifacts) {
    sgtest::TempDir dir("infer");
    InferResult r;
    r.final_image = ImageGrid(64, 64, 3, 1.5);
    r.canny_binarized = structure::remap(BinaryMap(64, 64, 1));
    r.canny_binarized.kind = CannyKind::binarized;
    write_inference(dir.path, r);
    EXPECT_EQ(png::read(dir.path / "final.png"), ImageGrid(64, 64, 3, 1.0));
    EXPECT_EQ(datagen::read_json(dir.path / "meta.json")["canny_kind"], "binarized");
}
