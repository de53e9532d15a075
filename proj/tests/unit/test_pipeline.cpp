// Copyright 2026 The wsiqc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <fstream>
#include <set>

#include "test_util.hpp"
#include "wsiqc/backends.hpp"
#include "wsiqc/grid_metric.hpp"
#include "wsiqc/pipeline.hpp"
#include "wsiqc/png_io.hpp"
#include "wsiqc/stain_metric.hpp"
#include "wsiqc/synth.hpp"

using namespace wsiqc;
using namespace wsiqc::pipeline;
using wsiqc::testing::TempDir;

namespace {

synth::SceneSpec CleanScene(std::uint64_t seed = 1) {
  synth::SceneSpec s;
  s.seed = seed;
  s.width = 4096;
  s.height = 3072;
  s.artifact_magnification = 20;
  s.specimen = synth::Rect{1024, 0, 3072, 3072};
  s.cells = 5200;
  s.masses = 20;
  return s;
}

// Grid and stain calibration for CleanScene, written once per process.
struct Calibrations {
  TempDir dir{"pipeline_cal"};
  std::filesystem::path grid = dir / "grid.json";
  std::filesystem::path stain = dir / "stain.json";

  Calibrations() {
    std::vector<grid::MeanVar> ref;
    for (const RgbImage& p : synth::RenderBackgroundPatches(CleanScene(), 20, 60, 5)) {
      ref.push_back(grid::PatchMeanVar(p, p.width, p.height));
    }
    grid::SaveCalibration(grid, grid::CalibrateGrid(ref));

    std::vector<stain::ReferenceGray> grays;
    for (std::uint64_t seed = 100; grays.size() < stain::kMinStainReferences; ++seed) {
      synth::SceneSpec s = CleanScene(seed);
      const synth::GroundTruth t = synth::GenerateSlide(s).truth;
      grays.push_back({*t.v_gray_hematoxylin, *t.v_gray_eosin});
    }
    stain::SaveCalibration(stain, stain::CalibrateStain(grays));
  }
};

const Calibrations& Cal() {
  static const Calibrations cal;
  return cal;
}

PipelineConfig CalibratedConfig() {
  PipelineConfig c;
  c.artifact_magnification = 20;
  c.grid_calibration = Cal().grid;
  c.stain_calibration = Cal().stain;
  c.workers = 2;
  return c;
}

double Metric(const QualityReport& r, MetricId id) { return r.metrics[Index(id)].value; }

const PatchScoreMap& MapFor(const Evaluation& e, const std::string& metric) {
  for (const PatchScoreMap& m : e.patch_scores) {
    if (m.metric == metric) return m;
  }
  FAIL("no patch map for " << metric);
  return e.patch_scores.front();
}

std::set<std::array<std::uint8_t, 3>> Colours(const RgbImage& img) {
  std::set<std::array<std::uint8_t, 3>> out;
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    out.insert({img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]});
  }
  return out;
}

}  // namespace

TEST_CASE("config files") {
  const PipelineConfig c = ParseConfig(R"(
[magnification]
artifact = 10
[focus]
sample_every = 3
weights = "w.json"
[backend]
kind = "files"
dir = "art"
[runtime]
workers = 4
)",
                                       "/base");
  CHECK(c.artifact_magnification == 10);
  CHECK(c.content_magnification == 20);
  CHECK(c.sample_every == 3);
  CHECK(*c.focus_weights == std::filesystem::path("/base/w.json"));
  CHECK(c.backend == BackendKind::kFiles);
  CHECK(c.backend_dir == std::filesystem::path("/base/art"));
  CHECK(c.workers == 4);

  CHECK_THROWS_CODE(ParseConfig("[focus]\nwindo = 64\n"), ErrorCode::kInvalidArgument);
  CHECK_THROWS_CODE(ParseConfig("[extras]\n"), ErrorCode::kInvalidArgument);
  CHECK_THROWS_CODE(ParseConfig("[backend]\nkind = \"cloud\"\n"), ErrorCode::kInvalidArgument);
  CHECK_THROWS_CODE(ParseConfig("[focus]\nsample_every = 0\n"), ErrorCode::kInvalidArgument);

  PipelineConfig a, b = a;
  b.workers = 7;
  CHECK(ConfigHash(a) == ConfigHash(b));
  CHECK(ConfigHash(a).size() == 16);
  b.sample_every = 2;
  CHECK(ConfigHash(a) != ConfigHash(b));

  ParseBackendSelector("files:/x", a);
  CHECK(a.backend == BackendKind::kFiles);
  CHECK(a.backend_dir == std::filesystem::path("/x"));
  ParseBackendSelector("none", a);
  CHECK(a.backend == BackendKind::kNone);
  CHECK_THROWS_CODE(ParseBackendSelector("files", a), ErrorCode::kInvalidArgument);
}

TEST_CASE("reports round trip") {
  QualityReport r;
  r.slide_id = "s1";
  r.metrics[0] = {0.875, true, {{"v_wsi", 12.5}}, {}};
  r.metrics[1] = {1.0, false, {}, {"no content"}};
  r.score = 7.25;
  r.decision = score::Decide(7.25, r.Vector());
  r.backend = "files";
  r.artifact_patches = 3;
  r.content_patches = 9;
  r.timings = {{"open", 0.5}};
  r.config_hash = "0123456789abcdef";
  r.version = "x";
  CHECK(ParseReport(SerializeReport(r)) == r);
  QualityReport no_timing = r;
  no_timing.timings.clear();
  CHECK(ParseReport(SerializeReport(r, false)) == no_timing);
  CHECK_THROWS(ParseReport("{}"));
}

TEST_CASE("a 20x slide cannot be read at 40x") {
  const synth::SyntheticSlide slide = synth::GenerateSlide(CleanScene());
  PipelineConfig c;
  c.content_magnification = 40;
  try {
    EvaluateSlide(slide.AsSlide(), nullptr, c);
    FAIL("expected a tiling error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "tiling");
    CHECK(e.code() == ErrorCode::kMagnificationUnavailable);
  }
}

TEST_CASE("without backend or calibration only q2 and q5 are evaluated") {
  const synth::SyntheticSlide slide = synth::GenerateSlide(CleanScene());
  PipelineConfig c;
  c.artifact_magnification = 20;
  const QualityReport r = EvaluateSlide(slide.AsSlide(), nullptr, c).report;
  CHECK(r.backend == "none");
  for (int k = 0; k < kMetricCount; ++k) {
    const bool expected = k == Index(MetricId::kFocus) || k == Index(MetricId::kStain);
    CHECK_MESSAGE(r.metrics[k].evaluable == expected, MetricName(k));
    if (!expected) CHECK(r.metrics[k].value == kImputedValue);
  }
  CHECK_FALSE(r.metrics[0].warnings.empty());
  REQUIRE(r.score.has_value());
  REQUIRE(r.decision.has_value());
}

TEST_CASE("a blank slide has no score") {
  synth::SceneSpec s;
  s.width = s.height = 1024;
  const synth::SyntheticSlide slide = synth::GenerateSlide(s);
  const QualityReport r = EvaluateSlide(slide.AsSlide(), &slide.oracle, PipelineConfig{}).report;
  CHECK(r.content_patches == 0);
  CHECK_FALSE(r.score.has_value());
  CHECK_FALSE(r.decision.has_value());
  for (const MetricEntry& m : r.metrics) CHECK_FALSE(m.evaluable);
}

TEST_CASE("clean slide, blurred twin and heatmaps") {
  const synth::SyntheticSlide clean = synth::GenerateSlide(CleanScene());
  synth::SceneSpec blurred_spec = CleanScene();
  blurred_spec.blur.push_back({synth::Rect{1024, 0, 3072, 2048}, 3});
  const synth::SyntheticSlide blurred = synth::GenerateSlide(blurred_spec);

  PipelineConfig c = CalibratedConfig();
  const Evaluation ec = EvaluateSlide(clean.AsSlide(), &clean.oracle, c);
  const QualityReport& r = ec.report;
  INFO(SerializeReport(r, false));
  for (MetricId id : {MetricId::kGrid, MetricId::kMarker, MetricId::kBubble, MetricId::kStain,
                      MetricId::kCellCount, MetricId::kCellMass, MetricId::kNeutrophil}) {
    CHECK_MESSAGE(r.metrics[Index(id)].evaluable, MetricName(id));
    CHECK_MESSAGE(Metric(r, id) >= 0.99, MetricName(id));
  }
  CHECK(Metric(r, MetricId::kFocus) >= 0.85);
  REQUIRE(r.decision.has_value());
  CHECK(r.decision->action == score::Action::kArchive);
  CHECK(r.decision->reasons.empty());

  const Evaluation eb = EvaluateSlide(blurred.AsSlide(), &blurred.oracle, c);
  const double q2_blur = Metric(eb.report, MetricId::kFocus);
  CHECK(q2_blur < Metric(r, MetricId::kFocus) - 0.2);
  REQUIRE(eb.report.decision.has_value());
  CHECK(eb.report.decision->reasons == std::vector<std::string>{"q2"});
  // A focus fault alone does not pull the score under the archive bar.
  CHECK(*eb.report.score < *r.score);
  CHECK(*eb.report.decision == score::Decide(*eb.report.score, eb.report.Vector()));

  // The blurred rows of the specimen score low; the rest do not.
  const PatchScoreMap& focus = MapFor(eb, "q2");
  REQUIRE(focus.cols == 8);
  REQUIRE(focus.rows == 6);
  for (std::int64_t i = 0; i < focus.rows; ++i) {
    for (std::int64_t j = 0; j < focus.cols; ++j) {
      const auto& v = focus.values[i * focus.cols + j];
      const bool content = j >= 2;
      CHECK(v.has_value() == content);
      if (content) CHECK((*v < 0.5) == (i < 4));
    }
  }

  TempDir tmp("heatmap");
  EmitHeatmap(*blurred.AsSlide(), focus, tmp / "q2.png", 8);
  const RgbImage img = ReadPngRgb(tmp / "q2.png");
  CHECK(img.width == 8 * 8);
  CHECK(img.height == 6 * 8);
  const auto norm = NormalizeScores(focus);
  CHECK(*std::min_element(norm.begin(), norm.end(), [](auto a, auto b) {
    return a.value_or(2) < b.value_or(2);
  }) == 0.0);

  // Workers change nothing.
  c.workers = 1;
  const std::string one = SerializeReport(EvaluateSlide(clean.AsSlide(), &clean.oracle, c).report, false);
  c.workers = 8;
  CHECK(one == SerializeReport(EvaluateSlide(clean.AsSlide(), &clean.oracle, c).report, false));
  c.workers = 2;
  CHECK(one == SerializeReport(r, false));

  // The same artifacts through the file backend give the same report.
  const SlideHandle h = clean.AsSlide();
  const backend::ArtifactSet files = [&] {
    backend::SaveArtifacts(tmp / "art", clean.oracle);
    return backend::LoadArtifacts(tmp / "art");
  }();
  QualityReport via_files = EvaluateSlide(h, &files, c).report;
  QualityReport direct = r;
  via_files.backend = direct.backend = "";
  via_files.timings.clear();
  direct.timings.clear();
  CHECK(SerializeReport(via_files) == SerializeReport(direct));
}

TEST_CASE("heatmap colours") {
  RgbImage base(1024, 512, 230);
  const SlideHandle slide = MakeMemorySlide("m", 20, {Rational{1, 1}}, {base});
  PatchScoreMap m{"q2", 20, 1, 2, {0.4, 0.4}};
  CHECK(NormalizeScores(m) == std::vector<std::optional<double>>{0.5, 0.5});
  TempDir tmp("colours");
  EmitHeatmap(*slide, m, tmp / "u.png", 4);
  CHECK(Colours(ReadPngRgb(tmp / "u.png")).size() == 1);

  m.values = {0.1, 0.9};
  CHECK(NormalizeScores(m) == std::vector<std::optional<double>>{0.0, 1.0});
  EmitHeatmap(*slide, m, tmp / "t.png", 4);
  CHECK(Colours(ReadPngRgb(tmp / "t.png")).size() == 2);
  CHECK(ColorMap(0) != ColorMap(1));

  m.values = {std::nullopt, 0.3};
  CHECK(NormalizeScores(m) == std::vector<std::optional<double>>{std::nullopt, 0.5});
}

TEST_CASE("batches") {
  TempDir tmp("batch");
  PipelineConfig c;
  c.artifact_magnification = 20;
  c.backend = BackendKind::kOracle;

  BatchResult empty = BatchEvaluate({}, c);
  CHECK(empty.rows.empty());
  CHECK(empty.summary_csv == SummaryCsvHeader());

  synth::SceneSpec s;
  s.width = s.height = 1024;
  s.specimen = synth::Rect{0, 0, 512, 1024};
  s.cells = 200;
  synth::GenerateSlideTo(tmp / "a", s);
  s.seed = 2;
  synth::GenerateSlideTo(tmp / "b", s);
  std::filesystem::create_directories(tmp / "bad" / "slide");
  std::ofstream(tmp / "bad" / "slide" / "manifest.json") << "{not json";

  {
    std::ofstream list(tmp / "list.txt");
    list << "# slides\na/slide\n\nbad/slide\n" << (tmp / "b" / "slide").string() << "\n";
  }
  const auto paths = ReadSlideList(tmp / "list.txt");
  REQUIRE(paths.size() == 3);
  CHECK(paths[0] == tmp / "a" / "slide");

  const BatchResult r = BatchEvaluate(paths, c);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[0].report.has_value());
  CHECK_FALSE(r.rows[1].report.has_value());
  CHECK_FALSE(r.rows[1].error.empty());
  CHECK(r.rows[2].report.has_value());
  CHECK(r.rows[0].report->slide_id == "a");
  CHECK(r.rows[0].report->backend == "oracle");
  CHECK(std::count(r.summary_csv.begin(), r.summary_csv.end(), '\n') == 4);
  CHECK(r.summary_csv.rfind(SummaryCsvHeader(), 0) == 0);
}
