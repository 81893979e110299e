#include <fstream>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "ostk/error.hpp"
#include "ostk/pipeline.hpp"
#include "ostk/scenes.hpp"
#include "support.hpp"

namespace ostk {
namespace {

using testing::kind_of;
namespace fs = std::filesystem;

const BackboneModel& fixture_model() {
  static const BackboneModel model = load_model(testing::fixture_weights());
  return model;
}

TEST(Plan, DistinctStylesGiveOneRunEach) {
  const std::vector<StyleJob> jobs{{"a.png", "vase:0"}, {"b.png", "vase:1"}, {"c.png", "vase:2"}};
  const auto p = plan(jobs, {});
  EXPECT_EQ(p.runs.size(), 3u);
  EXPECT_EQ(p.job_run, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(p.composite_order, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Plan, SharedStyleIsStylizedOnce) {
  const auto abs = fs::current_path() / "s.png";
  const std::vector<StyleJob> jobs{{"s.png", "vase:0"}, {abs, "bird"}, {"./s.png", "2"}};
  const auto p = plan(jobs, {});
  ASSERT_EQ(p.runs.size(), 1u);
  EXPECT_EQ(p.runs[0].jobs, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(p.job_run, (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_EQ(p.composite_order, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Plan, OverridesApplyPerRun) {
  StyleJob a{"s.png", "vase:0"};
  StyleJob b{"s.png", "vase:1"};
  b.overrides.iterations = 7;
  b.overrides.beta = 10.0;
  StyleJob c{"s.png", "vase:2"};
  c.feather_radius = 3;
  StyleTransferConfig base;
  base.iterations = 20;
  const auto p = plan({a, b, c}, base);
  ASSERT_EQ(p.runs.size(), 2u);
  EXPECT_EQ(p.job_run, (std::vector<std::size_t>{0, 1, 0}));
  EXPECT_EQ(p.runs[0].config.iterations, 20);
  EXPECT_EQ(p.runs[1].config.iterations, 7);
  EXPECT_EQ(p.runs[1].config.beta, 10.0);
  EXPECT_EQ(p.runs[1].config.alpha, base.alpha);
}

TEST(ComposeLayers, OverlapIsLastJobWins) {
  const auto canvas = testing::random_image(12, 12, 1);
  const auto s1 = testing::random_image(12, 12, 2);
  const auto s2 = testing::random_image(12, 12, 3);
  Mask m1(12, 12), m2(12, 12);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) m1.at(y, x) = 1;
  }
  for (int y = 4; y < 12; ++y) {
    for (int x = 4; x < 12; ++x) m2.at(y, x) = 1;
  }
  const auto out12 = compose_layers(canvas, {{&s1, m1}, {&s2, m2}});
  const auto out21 = compose_layers(canvas, {{&s2, m2}, {&s1, m1}});
  for (int y = 0; y < 12; ++y) {
    for (int x = 0; x < 12; ++x) {
      for (int c = 0; c < 3; ++c) {
        const bool in1 = m1.at(y, x) == 1, in2 = m2.at(y, x) == 1;
        const float want12 = in2 ? s2.at(y, x, c) : in1 ? s1.at(y, x, c) : canvas.at(y, x, c);
        const float want21 = in1 ? s1.at(y, x, c) : in2 ? s2.at(y, x, c) : canvas.at(y, x, c);
        ASSERT_EQ(out12.at(y, x, c), want12);
        ASSERT_EQ(out21.at(y, x, c), want21);
      }
    }
  }
}

TEST(ComposeLayers, DisjointLayersCommute) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto canvas = testing::random_image(9, 9, seed);
    const auto s1 = testing::random_image(9, 9, seed + 1);
    const auto s2 = testing::random_image(9, 9, seed + 2);
    const auto split = testing::random_binary_mask(9, 9, seed + 3);
    const auto keep = testing::random_binary_mask(9, 9, seed + 4);
    Mask m1(9, 9), m2(9, 9);
    for (std::size_t i = 0; i < split.values.size(); ++i) {
      if (!keep.values[i]) continue;
      (split.values[i] ? m1 : m2).values[i] = 1;
    }
    EXPECT_EQ(compose_layers(canvas, {{&s1, m1}, {&s2, m2}}), compose_layers(canvas, {{&s2, m2}, {&s1, m1}}));
  }
}

struct PipelineFixture : ::testing::Test {
  testing::TempDir dir{"pipeline"};
  scenes::Scene scene = scenes::render({.height = 256, .width = 384, .vases = 3, .birds = 0, .seed = 2024});
  fs::path content = dir / "content.png";
  fs::path style_a = dir / "a.png";
  fs::path style_b = dir / "b.png";

  void SetUp() override {
    save_image(scene.image, content);
    save_image(scenes::pattern(scenes::Pattern::stripes, 128, 128, 1), style_a);
    save_image(scenes::pattern(scenes::Pattern::dots, 128, 128, 2), style_b);
  }

  RunOptions options(int iterations = 3) const {
    RunOptions o;
    o.style.iterations = iterations;
    o.long_side = 384;
    o.config_snapshot = R"({"note":"unit"})";
    return o;
  }
};

TEST_F(PipelineFixture, WritesLayoutAndKeepsBackground) {
  const auto& model = fixture_model();
  const auto calls = model.segment_calls();
  const fs::path out = dir / "out";
  const auto manifest = run(model, content, {{style_a, "vase:0"}, {style_b, "vase:1"}, {style_a, "vase:2"}},
                            options(), out);
  EXPECT_EQ(model.segment_calls(), calls + 1);
  EXPECT_EQ(manifest.stylize_runs, 2u);
  EXPECT_EQ(manifest.extent, (Extent{256, 384}));

  for (const char* name : {"final.png", "manifest.json", "job_0_mask.png", "job_0_styled_full.png", "job_0_loss.csv",
                           "job_1_mask.png", "job_2_loss.csv"}) {
    EXPECT_TRUE(fs::exists(out / name)) << name;
  }
  for (const auto& job : manifest.jobs) {
    for (const auto& [role, file] : job.artifacts) EXPECT_TRUE(fs::exists(out / file)) << role;
  }

  const auto original = load_image(content);
  const auto final_image = load_image(out / "final.png");
  BinaryMask all(256, 384);
  for (int k = 0; k < 3; ++k) all = mask_union(all, load_mask(out / ("job_" + std::to_string(k) + "_mask.png")));
  std::size_t outside = 0;
  for (int y = 0; y < 256; ++y) {
    for (int x = 0; x < 384; ++x) {
      if (all.at(y, x)) continue;
      ++outside;
      for (int c = 0; c < 3; ++c) ASSERT_EQ(final_image.at(y, x, c), original.at(y, x, c));
    }
  }
  EXPECT_GT(outside, 0u);
  EXPECT_LT(outside, static_cast<std::size_t>(256 * 384));

  const auto json = nlohmann::json::parse(std::ifstream(out / "manifest.json"));
  EXPECT_EQ(json.at("jobs").size(), 3u);
  EXPECT_EQ(json.at("config").at("note"), "unit");
  EXPECT_EQ(json.at("stylize_runs"), 2);
  EXPECT_EQ(json.at("final"), "final.png");
  EXPECT_EQ(json.at("jobs")[1].at("selector"), "vase:1");
}

TEST_F(PipelineFixture, ResizedContentBackgroundIsExact) {
  const fs::path out = dir / "out";
  auto opts = options(2);
  opts.long_side = 192;
  const auto manifest = run(fixture_model(), content, {{style_a, "vase"}}, opts, out);
  ASSERT_EQ(manifest.extent, (Extent{128, 192}));
  const auto resized = testing::quantized(resize(load_image(content), 128, 192));
  const auto final_image = load_image(out / "final.png");
  const auto mask = load_mask(out / "job_0_mask.png");
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 192; ++x) {
      if (mask.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) ASSERT_EQ(final_image.at(y, x, c), resized.at(y, x, c));
    }
  }
}

TEST_F(PipelineFixture, UnmatchedSelectorWritesNothing) {
  const fs::path out = dir / "strict";
  EXPECT_EQ(kind_of([&] { run(fixture_model(), content, {{style_a, "vase:0"}, {style_b, "bird"}}, options(), out); }),
            ErrorKind::NoTargetMatched);
  EXPECT_FALSE(fs::exists(out));

  const fs::path blank_content = dir / "blank.png";
  save_image(scenes::blank(128, 128), blank_content);
  EXPECT_EQ(kind_of([&] { run(fixture_model(), blank_content, {{style_a, "0"}}, options(), out); }),
            ErrorKind::NoTargetMatched);
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(PipelineFixture, SkipUnmatchedKeepsGoing) {
  const fs::path out = dir / "lenient";
  auto opts = options(2);
  opts.skip_unmatched = true;
  const auto manifest = run(fixture_model(), content, {{style_a, "bird"}, {style_b, "vase:0"}}, opts, out);
  ASSERT_EQ(manifest.jobs.size(), 2u);
  EXPECT_TRUE(manifest.jobs[0].skipped);
  EXPECT_FALSE(manifest.jobs[1].skipped);
  EXPECT_EQ(manifest.stylize_runs, 1u);
  EXPECT_FALSE(fs::exists(out / "job_0_mask.png"));
  EXPECT_TRUE(fs::exists(out / "job_1_mask.png"));
}

TEST_F(PipelineFixture, PreconditionErrors) {
  const fs::path out = dir / "bad";
  EXPECT_EQ(kind_of([&] { run(fixture_model(), content, {}, options(), out); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { run(fixture_model(), content, {{style_a, "vase:"}}, options(), out); }),
            ErrorKind::SelectorParseError);
  EXPECT_EQ(kind_of([&] { run(fixture_model(), dir / "missing.png", {{style_a, "vase"}}, options(), out); }),
            ErrorKind::FileNotFound);
  EXPECT_EQ(kind_of([&] { run(fixture_model(), content, {{dir / "missing.png", "vase"}}, options(), out); }),
            ErrorKind::FileNotFound);
  EXPECT_FALSE(fs::exists(out));
}

}  // namespace
}  // namespace ostk
