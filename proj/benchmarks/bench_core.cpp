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

#include <benchmark/benchmark.h>

#include <algorithm>
#include <cstring>

#include "wsiqc/artifact_metrics.hpp"
#include "wsiqc/content_metrics.hpp"
#include "wsiqc/focus_model.hpp"
#include "wsiqc/grid_metric.hpp"
#include "wsiqc/pipeline.hpp"
#include "wsiqc/pyramid.hpp"
#include "wsiqc/score_model.hpp"
#include "wsiqc/stain_metric.hpp"
#include "wsiqc/synth.hpp"

using namespace wsiqc;

namespace {

const synth::SyntheticSlide& Slide() {
  static const synth::SyntheticSlide slide = [] {
    synth::SceneSpec s;
    s.width = s.height = 2048;
    s.artifact_magnification = 20;
    s.specimen = synth::Rect{0, 0, 2048, 2048};
    s.cells = 1500;
    s.masses = 10;
    s.neutrophils = 300;
    return synth::GenerateSlide(s);
  }();
  return slide;
}

// Top-left 512x512 patch of the base level.
const RgbImage& Patch() {
  static const RgbImage patch = [] {
    const RgbImage& base = Slide().rasters[0];
    RgbImage p(kPatchSize, kPatchSize);
    for (int y = 0; y < kPatchSize; ++y) {
      std::memcpy(p.px(0, y), base.px(0, y), static_cast<std::size_t>(kPatchSize) * 3);
    }
    return p;
  }();
  return patch;
}

void BM_BoxResample(benchmark::State& state) {
  const RgbImage& base = Slide().rasters[0];
  const Rational ratio{static_cast<std::int64_t>(state.range(0)), 1};
  for (auto _ : state) {
    benchmark::DoNotOptimize(BoxResample(base, ratio, base.width / ratio.num, base.height / ratio.num));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(base.data.size()));
}
BENCHMARK(BM_BoxResample)->Arg(2)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_WhiteFraction(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(WhiteFraction(Patch()));
}
BENCHMARK(BM_WhiteFraction);

void BM_PatchMeanVar(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(grid::PatchMeanVar(Patch(), kPatchSize, kPatchSize));
}
BENCHMARK(BM_PatchMeanVar);

void BM_PredictWindow(benchmark::State& state) {
  const focus::Window w = focus::MakeWindow(Patch(), 100, 100, 64, 64);
  const focus::FocusNetWeights& weights = focus::DefaultWeights();
  for (auto _ : state) benchmark::DoNotOptimize(focus::PredictWindow(w, weights));
}
BENCHMARK(BM_PredictWindow);

void BM_ScorePatch(benchmark::State& state) {
  const focus::FocusNetWeights& weights = focus::DefaultWeights();
  for (auto _ : state) benchmark::DoNotOptimize(focus::ScorePatch(Patch(), weights));
}
BENCHMARK(BM_ScorePatch)->Unit(benchmark::kMillisecond);

void BM_MeasureStain(benchmark::State& state) {
  const stain::Deconvolver d(stain::StainBasis::Default());
  for (auto _ : state) benchmark::DoNotOptimize(stain::MeasurePatch(Patch(), d, stain::kDefaultTau));
}
BENCHMARK(BM_MeasureStain)->Unit(benchmark::kMillisecond);

void BM_CountObjects(benchmark::State& state) {
  const auto& detections = Slide().oracle.detections;
  for (auto _ : state) {
    benchmark::DoNotOptimize(content::CountObjects(detections, content::DetectionClass::kSquamousCell));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(detections.size()));
}
BENCHMARK(BM_CountObjects);

void BM_NeutrophilArea(benchmark::State& state) {
  const GrayImage gray = ToGray(Patch());
  std::vector<content::Box> boxes;
  for (const content::Detection& d : Slide().oracle.detections) {
    if (d.cls == content::DetectionClass::kNeutrophil && d.grid_i == 0 && d.grid_j == 0) boxes.push_back(d.box);
  }
  for (auto _ : state) benchmark::DoNotOptimize(content::PatchNeutrophilArea(gray, boxes));
}
BENCHMARK(BM_NeutrophilArea);

void BM_PredictScore(benchmark::State& state) {
  const score::GbdtModel& m = score::DefaultModel();
  score::Features x;
  x.fill(0.9);
  for (auto _ : state) {
    x[1] = x[1] == 0.9 ? 0.4 : 0.9;
    benchmark::DoNotOptimize(score::PredictScore(m, x));
  }
}
BENCHMARK(BM_PredictScore);

void BM_EvaluateSlide(benchmark::State& state) {
  const SlideHandle slide = Slide().AsSlide();
  pipeline::PipelineConfig c;
  c.artifact_magnification = 20;
  c.workers = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(pipeline::EvaluateSlide(slide, &Slide().oracle, c));
}
BENCHMARK(BM_EvaluateSlide)->Arg(1)->Unit(benchmark::kMillisecond)->Iterations(2);

}  // namespace
BENCHMARK_MAIN();
