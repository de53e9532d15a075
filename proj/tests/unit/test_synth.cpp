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

#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "test_util.hpp"
#include "wsiqc/pyramid.hpp"
#include "wsiqc/synth.hpp"

using namespace wsiqc;
using namespace wsiqc::synth;
using wsiqc::testing::TempDir;

namespace {

SceneSpec Small() {
  SceneSpec s;
  s.width = s.height = 2048;
  s.artifact_magnification = 20;
  s.specimen = Rect{0, 0, 2048, 2048};
  return s;
}

std::string ReadBytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("empty spec gives a blank slide with nothing to evaluate") {
  SceneSpec s;
  s.width = s.height = 1024;
  const SyntheticSlide slide = GenerateSlide(s);
  CHECK(slide.truth.content_patches == 0);
  CHECK(slide.truth.artifact_patches == 0);
  for (int k = 0; k < kMetricCount; ++k) {
    CHECK_FALSE(slide.truth.metrics.evaluable[k]);
    CHECK(slide.truth.metrics.values[k] == kImputedValue);
  }
  CHECK(slide.oracle.detections.empty());
  IterPatches(*slide.AsSlide(), 20, [](const PatchRecord& p) { CHECK(p.is_white); });
}

TEST_CASE("a marker covering 2 percent of the content gives q3 = 0.98") {
  SceneSpec s = Small();
  // 16 content patches of 512^2 at 20x. A capsule of half width h and
  // length L covers 2hL + pi h^2.
  const double content = 16.0 * 512 * 512;
  const double h = 40;
  const double length = (0.02 * content - std::numbers::pi * h * h) / (2 * h);
  s.markers.push_back({400, 1000, 400 + length, 1000, h});
  const SyntheticSlide slide = GenerateSlide(s);
  CHECK(slide.truth.artifact_patches == 16);
  CHECK(slide.truth.has_reference[Index(MetricId::kMarker)]);
  CHECK(slide.truth.metrics[MetricId::kMarker] == doctest::Approx(0.98).epsilon(0.001));
  CHECK(slide.truth.metrics[MetricId::kBubble] == 1.0);
}

TEST_CASE("identical seeds give byte-identical tile trees") {
  SceneSpec s = Small();
  s.cells = 200;
  s.neutrophils = 20;
  s.masses = 2;
  s.grid_amplitude = 4;
  s.blur.push_back({Rect{0, 0, 512, 512}, 2});
  TempDir tmp("synth");
  // The slide id comes from the directory name, so both copies use the same one.
  const auto a = tmp / "1" / "s";
  const auto b = tmp / "2" / "s";
  GenerateSlideTo(a, s);
  GenerateSlideTo(b, s);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), a);
    REQUIRE(ReadBytes(e.path()) == ReadBytes(b / rel));
    ++files;
  }
  CHECK(files > 10);
  CHECK(std::filesystem::exists(a / "slide" / "manifest.json"));
  CHECK(std::filesystem::exists(a / "ground_truth.json"));

  s.seed = 2;
  const SyntheticSlide other = GenerateSlide(s);
  CHECK_FALSE(other.rasters[0] == GenerateSlide(Small()).rasters[0]);
}

TEST_CASE("spec files round trip") {
  SceneSpec s = Small();
  s.cells = 10;
  s.markers.push_back({100, 100, 300, 200, 9});
  s.bubbles.push_back({800, 800, 120});
  s.blur.push_back({Rect{0, 0, 512, 512}, 1.5});
  const SceneSpec back = ParseSpec(SerializeSpec(s));
  CHECK(SerializeSpec(back) == SerializeSpec(s));
  CHECK(back.markers.size() == 1);
  CHECK(back.bubbles[0].radius == 120);
}

TEST_CASE("out-of-bounds specs are rejected") {
  SceneSpec s = Small();
  s.markers.push_back({100, 100, 3000, 100, 10});
  CHECK_THROWS_CODE(Validate(s), ErrorCode::kSpecOutOfBounds);

  s = Small();
  s.specimen = Rect{1024, 1024, 2048, 100};
  CHECK_THROWS_CODE(Validate(s), ErrorCode::kSpecOutOfBounds);

  s = Small();
  s.cells = 100000;  // cannot be packed
  CHECK_THROWS_CODE(GenerateSlide(s), ErrorCode::kSpecOutOfBounds);

  s = Small();
  s.specimen.reset();
  s.cells = 1;
  CHECK_THROWS_CODE(Validate(s), ErrorCode::kSpecOutOfBounds);

  s = Small();
  s.levels = {1.0, 0.5, 0.5};
  CHECK_THROWS_CODE(Validate(s), ErrorCode::kSpecOutOfBounds);

  s = Small();
  s.bubbles.push_back({20, 20, 100});
  CHECK_THROWS_CODE(Validate(s), ErrorCode::kSpecOutOfBounds);
}

TEST_CASE("ground truth is consistent with the oracle artifacts") {
  SceneSpec s = Small();
  s.cells = 600;
  s.masses = 60;
  s.neutrophils = 150;
  s.decoys = 40;
  const SyntheticSlide slide = GenerateSlide(s);
  const GroundTruth& t = slide.truth;
  CHECK(t.cell_count == 600);
  CHECK(t.mass_count == 60);
  CHECK(t.metrics[MetricId::kCellCount] == doctest::Approx(600.0 / 5000));
  CHECK(t.metrics[MetricId::kCellMass] == doctest::Approx(50.0 / 60));
  CHECK(t.s_total == t.content_patches * 512.0 * 512.0);
  CHECK(t.metrics[MetricId::kNeutrophil] == doctest::Approx(1 - t.s_neutrophil / t.s_total));
  CHECK_FALSE(t.has_reference[Index(MetricId::kFocus)]);

  // Decoys are low-confidence detections.
  std::int64_t low = 0;
  for (const auto& d : slide.oracle.detections) low += d.conf < content::kConfidenceFloor;
  CHECK(low >= 40);
}

TEST_CASE("background variance model") {
  CHECK(RoundingVariance(1) == 0.0);
  // k/2 for k in {0, 1}: errors 0 and +0.5 (half rounds up), mean 0.25.
  CHECK(RoundingVariance(2) == doctest::Approx(0.0625));
  SceneSpec s;
  const auto patches = RenderBackgroundPatches(s, 4, 6, 1);
  CHECK(patches.size() == 6);
  double mean_var = 0;
  for (const RgbImage& p : patches) {
    double m = 0, m2 = 0;
    const GrayImage g = ToGray(p);
    for (std::uint8_t v : g.data) {
      m += v;
      m2 += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(g.data.size());
    mean_var += (m2 / n - (m / n) * (m / n)) / 6;
  }
  CHECK(mean_var == doctest::Approx(AnalyticBackgroundVariance(s, 4)).epsilon(0.05));
}

TEST_CASE("focus ladder labels") {
  CHECK(LadderTarget(0, 12) == 12.0);
  CHECK(LadderTarget(11, 12) == 0.0);
  FocusLadderConfig cfg;
  cfg.windows_per_level = 2;
  cfg.background_share = 0.5;
  const auto ladder = RenderFocusLadder(cfg);
  CHECK(ladder.size() == 12 * 2 + 12);
  for (const auto& s : ladder) {
    CHECK(s.target == LadderTarget(s.level, 12));
    CHECK(s.image.width >= cfg.window);
  }
  CHECK(ToTrainSamples(ladder).size() == ladder.size());
}
