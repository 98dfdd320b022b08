// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "structgen/datagen/dataset.hpp"
#include "support.hpp"

using namespace structgen;
using namespace structgen::datagen;

namespace {

SceneSpec text_spec(const std::string& text, Pose pose = {}) {
    SceneSpec s;
    s.shape = ShapeKind::rectangle;
    s.half_width = 22;
    s.half_height = 14;
    s.fill = {0.8, 0.3, 0.2};
    s.background = {0.1, 0.2, 0.3};
    s.text_color = {1, 1, 1};
    s.text = text;
    s.glyph_scale = 2;
    s.pose = pose;
    return s;
}

std::set<std::array<double, 3>> colours(const ImageGrid& g) {
    std::set<std::array<double, 3>> out;
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) out.insert({g(y, x, 0), g(y, x, 1), g(y, x, 2)});
    return out;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::usage;
}

const GlyphAlphabet kAlphabet;

}  // namespace

TEST(Glyphs, ThirtySixDistinctBitmaps) {
    EXPECT_EQ(kAlphabet.charset().size(), 36u);
    std::set<GlyphBitmap> seen;
    for (char ch : kAlphabet.charset()) seen.insert(kAlphabet.glyph(ch));
    EXPECT_EQ(seen.size(), 36u);
    EXPECT_FALSE(kAlphabet.contains('a'));
    EXPECT_THROW(kAlphabet.glyph('?'), Error);
}

TEST(Render, EmptyTextIsShapeOnly) {
    SceneSpec s = text_spec("");
    const ImageGrid g = render_scene(s, 64, kAlphabet);
    EXPECT_EQ(colours(g).size(), 2u);
}

TEST(Render, Deterministic) {
    const SceneSpec s = text_spec("HI", {0.2, 10});
    EXPECT_EQ(render_scene(s, 64, kAlphabet), render_scene(s, 64, kAlphabet));
}

TEST(Render, GlyphPixelCountMatchesBitmap) {
    for (int scale : {1, 2, 3}) {
        SceneSpec s = text_spec("K7Q", {});
        s.half_width = 30, s.half_height = 20;
        s.glyph_scale = scale;
        const ImageGrid g = render_scene(s, 64, kAlphabet);
        int on = 0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) on += g(y, x, 0) == 1.0 && g(y, x, 1) == 1.0 && g(y, x, 2) == 1.0;
        int expected = 0;
        for (char ch : s.text) expected += kAlphabet.on_pixels(ch) * scale * scale;
        EXPECT_EQ(on, expected) << "scale " << scale;
    }
}

TEST(Render, LayoutAndPoseErrors) {
    SceneSpec big = text_spec("ABCDEFGH");
    big.half_width = 10;
    EXPECT_EQ(kind_of([&] { render_scene(big, 64, kAlphabet); }), ErrorKind::layout);
    EXPECT_EQ(kind_of([&] { render_scene(text_spec("A", {0.6, 0}), 64, kAlphabet); }), ErrorKind::pose);
    EXPECT_EQ(kind_of([&] { render_scene(text_spec("A", {0.0, 50}), 64, kAlphabet); }), ErrorKind::pose);
    SceneSpec low = text_spec("A");
    low.text_color = low.fill;
    EXPECT_EQ(kind_of([&] { render_scene(low, 64, kAlphabet); }), ErrorKind::config);
}

TEST(View, IdentityDeltaReproducesRender) {
    const SceneSpec s = text_spec("OK", {0.1, -10});
    EXPECT_EQ(synthesize_view(s, {}, 64, kAlphabet), render_scene(s, 64, kAlphabet));
}

TEST(View, HalfTurnOfSymmetricShapeIsPointReflection) {
    for (ShapeKind shape : {ShapeKind::rectangle, ShapeKind::ellipse}) {
        SceneSpec s = text_spec("");
        s.shape = shape;
        const ImageGrid a = render_scene(s, 64, kAlphabet), b = synthesize_view(s, {0.0, 180.0}, 64, kAlphabet);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                for (int c = 0; c < 3; ++c) ASSERT_EQ(b(y, x, c), a(63 - y, 63 - x, c));
    }
}

TEST(View, ComposedPoseOutOfLimitsIsPoseError) {
    EXPECT_EQ(kind_of([&] { synthesize_view(text_spec("A", {0.4, 0}), {0.2, 0}, 64, kAlphabet); }), ErrorKind::pose);
}

TEST(View, ExtremeShearStaysLegible) {
    for (const std::string text : {"AB", "X9", "QRS", "M0W"})
        for (double shear : {-0.5, 0.5}) {
            const ImageGrid g = synthesize_view(text_spec(text), {shear, 0.0}, 64, kAlphabet);
            const OcrResult r = ocr(g, kAlphabet);
            EXPECT_EQ(r.text, text) << "shear " << shear;
        }
}

TEST(Ocr, UnrotatedTextReadsExactly) {
    const OcrResult r = ocr(render_scene(text_spec("AB"), 64, kAlphabet), kAlphabet);
    EXPECT_EQ(r.text, "AB");
    EXPECT_DOUBLE_EQ(r.confidence, 1.0);
}

TEST(Ocr, EmptyTextReadsNothing) {
    const OcrResult r = ocr(render_scene(text_spec(""), 64, kAlphabet), kAlphabet);
    EXPECT_EQ(r.text, "");
    EXPECT_EQ(r.confidence, 0.0);
    const OcrResult blank = ocr(ImageGrid(64, 64, 3, 0.5), kAlphabet);
    EXPECT_EQ(blank.text, "");
}

TEST(Ocr, ShearedAndRotated) {
    const OcrResult r = ocr(render_scene(text_spec("OK", {0.3, 20.0}), 64, kAlphabet), kAlphabet);
    EXPECT_EQ(r.text, "OK");
    EXPECT_GE(r.confidence, 0.8);
}

TEST(Filter, IdenticalPairAccepted) {
    const ImageGrid g = render_scene(text_spec("HEY"), 64, kAlphabet);
    const FilterDecision d = filter_pair(g, g, kAlphabet);
    EXPECT_TRUE(d.accept);
    EXPECT_EQ(d.reason, FilterReason::ok);
}

TEST(Filter, ReasonsForRejection) {
    const ImageGrid a = render_scene(text_spec("AB"), 64, kAlphabet);
    const ImageGrid b = synthesize_view(text_spec("AC"), {0.0, 15.0}, 64, kAlphabet);
    EXPECT_EQ(filter_pair(a, b, kAlphabet).reason, FilterReason::mismatch);
    const ImageGrid e = render_scene(text_spec(""), 64, kAlphabet);
    EXPECT_EQ(filter_pair(a, e, kAlphabet).reason, FilterReason::empty);
    EXPECT_THROW(filter_pair(a, a, kAlphabet, 0.0), Error);
}

TEST(Filter, PlantedCorpusSplitsExactly) {
    const auto corpus = sgtest::planted_corpus(100, 20, 42);
    int accepted = 0, false_accepts = 0, consistent = 0;
    for (const auto& p : corpus) {
        const bool ok = filter_pair(p.src, p.tgt, kAlphabet).accept;
        accepted += ok;
        consistent += p.consistent;
        false_accepts += ok && !p.consistent;
    }
    EXPECT_EQ(consistent, 80);
    EXPECT_EQ(false_accepts, 0);
    EXPECT_EQ(accepted, 80);
}

TEST(Prompts, NeutralPromptTokens) {
    const TokenIds ids = tokenize(prompt_template(kNeutralPrompt).text);
    EXPECT_EQ(ids, (TokenIds{token_id("this"), token_id("item"), token_id(","), token_id("without"), token_id("any"),
                             token_id("change")}));
    for (int id : ids) EXPECT_GT(id, 1);
    EXPECT_EQ(tokenize("Zebra")[0], 1);
    EXPECT_THROW(prompt_template(5), Error);
}

TEST(Build, SingleRecordIsReproducible) {
    const Dataset a = build_dataset(SourceDataset::texting, 1, 9), b = build_dataset(SourceDataset::texting, 1, 9);
    ASSERT_EQ(a.records.size(), 1u);
    EXPECT_EQ(a.records[0].src, b.records[0].src);
    EXPECT_EQ(a.records[0].tgt, b.records[0].tgt);
    EXPECT_EQ(a.records[0].edges, b.records[0].edges);
    EXPECT_EQ(a.records[0].text_content, b.records[0].text_content);
}

TEST(Build, WorkerCountDoesNotChangeOutput) {
    BuildOptions one, four;
    four.workers = 4;
    const Dataset a = build_dataset(SourceDataset::texting, 6, 3, one), b = build_dataset(SourceDataset::texting, 6, 3, four);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].seed, b.records[i].seed);
    EXPECT_EQ(a.stats.attempts, b.stats.attempts);
}

TEST(Build, GenericRecordsCarryNoText) {
    const Dataset ds = build_dataset(SourceDataset::generic, 40, 5);
    for (const auto& r : ds.records) {
        EXPECT_EQ(r.text_content, "");
        EXPECT_EQ(r.source, SourceDataset::generic);
        EXPECT_EQ(r.canny(), structure::remap(structure::canny(r.tgt_image(), r.params)));
    }
    EXPECT_TRUE(validate_dataset(ds).ok());
}

TEST(Build, TextingAcceptanceRateAtLeastHalf) {
    const Dataset ds = build_dataset(SourceDataset::texting, 200, 11);
    EXPECT_EQ(ds.records.size(), 200u);
    EXPECT_GE(ds.stats.acceptance_rate(), 0.5);
    const auto rep = validate_dataset(ds);
    EXPECT_TRUE(rep.ok()) << (rep.problems.empty() ? "" : rep.problems.front());
    for (const auto& r : ds.records) {
        EXPECT_FALSE(r.text_content.empty());
        EXPECT_EQ(ocr(r.src_image(), kAlphabet).text, r.text_content);
        EXPECT_EQ(ocr(r.tgt_image(), kAlphabet).text, r.text_content);
    }
}

TEST(Build, RejectsNonPositiveCount) { EXPECT_EQ(kind_of([] { build_dataset(SourceDataset::generic, 0, 1); }), ErrorKind::config); }

TEST(DatasetIo, RoundTripAndLayout) {
    sgtest::TempDir dir("ds");
    const Dataset ds = build_dataset(SourceDataset::texting, 3, 21);
    write_dataset(ds, dir.path);
    EXPECT_TRUE(std::filesystem::exists(dir.path / "manifest.json"));
    for (const char* f : {"src.png", "tgt.png", "canny.png", "meta.json"})
        EXPECT_TRUE(std::filesystem::exists(dir.path / "records" / ds.records[0].id / f)) << f;
    const Dataset back = load_dataset(dir.path);
    ASSERT_EQ(back.records.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.records[i].src, ds.records[i].src);
        EXPECT_EQ(back.records[i].edges, ds.records[i].edges);
        EXPECT_EQ(back.records[i].tokens, ds.records[i].tokens);
        EXPECT_EQ(back.records[i].spec, ds.records[i].spec);
    }
    EXPECT_TRUE(validate_dataset(back).ok());
}

TEST(DatasetIo, ValidatorCatchesTamperedTarget) {
    Dataset ds = build_dataset(SourceDataset::generic, 2, 4);
    ds.records[1].edges.data[0] ^= 1;
    const auto rep = validate_dataset(ds);
    EXPECT_FALSE(rep.ok());
    EXPECT_EQ(rep.problems.size(), 1u);
}

TEST(Sampler, DegenerateRatioDrawsOnlyFirst) {
    const Dataset a = build_dataset(SourceDataset::generic, 5, 1), b = build_dataset(SourceDataset::generic, 5, 2);
    MixedSampler s({&a.records, &b.records}, {1.0, 0.0}, 3);
    for (int i = 0; i < 500; ++i) EXPECT_EQ(s.next().dataset, 0u);
}

TEST(Sampler, EightyTwentyFrequency) {
    const Dataset a = build_dataset(SourceDataset::generic, 7, 1), b = build_dataset(SourceDataset::generic, 3, 2);
    MixedSampler s({&a.records, &b.records}, {0.8, 0.2}, 17);
    int second = 0;
    for (int i = 0; i < 10000; ++i) second += s.next().dataset == 1;
    // 3 sigma binomial bound at n = 10000, p = 0.2 is 0.012.
    EXPECT_NEAR(second / 10000.0, 0.2, 0.012);
}

TEST(Sampler, SameSeedSameSequenceAndEpochsArePermutations) {
    const Dataset a = build_dataset(SourceDataset::generic, 6, 1);
    MixedSampler s1({&a.records}, {1.0}, 5), s2({&a.records}, {1.0}, 5);
    std::set<const DatasetRecord*> epoch;
    for (int i = 0; i < 6; ++i) {
        const auto d1 = s1.next(), d2 = s2.next();
        EXPECT_EQ(d1.record, d2.record);
        epoch.insert(d1.record);
    }
    EXPECT_EQ(epoch.size(), 6u);
}

TEST(Sampler, RatioCountMismatchIsConfigError) {
    const Dataset a = build_dataset(SourceDataset::generic, 2, 1);
    EXPECT_EQ(kind_of([&] { MixedSampler({&a.records}, {0.5, 0.5}, 1); }), ErrorKind::config);
    EXPECT_EQ(kind_of([&] { MixedSampler({&a.records, &a.records}, {0.7, 0.2}, 1); }), ErrorKind::config);
}
