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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wsiqc/backends.hpp"
#include "wsiqc/focus_model.hpp"
#include "wsiqc/metrics.hpp"
#include "wsiqc/pyramid.hpp"
#include "wsiqc/stain_metric.hpp"

// Synthetic slides with known answers. Structures are painted as stain
// concentrations, pushed through the Beer-Lambert model onto a gray glass
// background, optionally blurred and overlaid with a stitching pattern, then
// quantised with Gaussian sensor noise. The generator also emits what a
// perfect segmentation/detection backend would report and the metric values
// those artifacts imply.

namespace wsiqc::synth {

struct Rect {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t w = 0;
  std::int64_t h = 0;
};

/// Pen stroke: the set of points within half_width of a segment.
struct Capsule {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double half_width = 10;
  stain::Vec3 od{0.55, 0.25, 0.05};
};

/// Air bubble: dark rim of the given thickness; the whole disk is occluded.
struct Ring {
  double cx = 0, cy = 0;
  double radius = 100;
  double thickness = 6;
  double od = 0.35;
};

struct BlurRegion {
  Rect rect;
  double sigma = 2;  // base pixels
};

struct SceneSpec {
  std::uint64_t seed = 1;
  std::int64_t width = 4096;
  std::int64_t height = 4096;
  double base_magnification = 20;
  std::vector<double> levels{1.0, 0.5, 0.2};
  double artifact_magnification = 4;
  double content_magnification = 20;

  double background = 228;  // glass intensity, all channels
  double noise_sigma = 4;

  std::optional<Rect> specimen;  // cells, masses and neutrophils live here
  double wash_eosin = 0.08;      // faint eosin film over the specimen area

  std::int64_t cells = 0;
  double cell_radius_min = 9;
  double cell_radius_max = 15;
  double cytoplasm_eosin = 0.3;
  double nucleus_radius = 4;
  double nucleus_hematoxylin = 0.2;

  std::int64_t masses = 0;
  double mass_hematoxylin = 0.6;
  double mass_eosin = 0.5;

  std::int64_t neutrophils = 0;
  double neutrophil_radius_min = 5;
  double neutrophil_radius_max = 9;
  double neutrophil_hematoxylin = 1.2;

  std::int64_t decoys = 0;  // low-confidence detections with no structure

  std::vector<Capsule> markers;
  std::vector<Ring> bubbles;
  std::vector<BlurRegion> blur;

  double grid_amplitude = 0;  // gray levels, peak
  double grid_period = 512;   // base pixels

  stain::StainBasis basis;
};

/// Throws SpecOutOfBounds (geometry outside the slide, impossible packing,
/// unsupported levels) or InvalidArgument for nonsensical values.
void Validate(const SceneSpec& spec);

std::string SerializeSpec(const SceneSpec& spec);
SceneSpec ParseSpec(const std::string& text);
SceneSpec LoadSpec(const std::filesystem::path& path);

/// Expected metric values and the intermediate quantities behind them.
struct GroundTruth {
  MetricVector metrics;
  /// False where the generator has no analytic value (q2).
  std::array<bool, kMetricCount> has_reference{};

  std::int64_t artifact_patches = 0;  // content patches at the artifact power
  std::int64_t content_patches = 0;   // content patches at the content power
  std::int64_t background_patches = 0;
  std::int64_t cell_count = 0;
  std::int64_t mass_count = 0;
  double s_neutrophil = 0;
  double s_total = 0;
  double marker_occlusion = 0;  // summed per-patch ratios
  double bubble_occlusion = 0;
  std::optional<double> v_gray_hematoxylin;
  std::optional<double> v_gray_eosin;
  double grid_delta = 0;       // variance added by the stitching pattern
  double grid_v_nogrid = 0;    // analytic background variance
  double blurred_fraction = 0; // share of content-power content area blurred
};

std::string SerializeGroundTruth(const GroundTruth& truth);

struct SyntheticSlide {
  std::string id;
  double base_magnification = 20;
  std::vector<Rational> factors;
  std::vector<RgbImage> rasters;  // level 0 first
  backend::ArtifactSet oracle;
  GroundTruth truth;

  SlideHandle AsSlide() const;
};

SyntheticSlide GenerateSlide(const SceneSpec& spec);

/// Writes <dir>/slide (tile tree), <dir>/oracle (artifact directory),
/// <dir>/ground_truth.json and <dir>/spec.json.
void WriteSyntheticSlide(const std::filesystem::path& dir, const SyntheticSlide& slide,
                         const SceneSpec& spec);

/// Convenience: generate and write. Identical specs give identical files.
SyntheticSlide GenerateSlideTo(const std::filesystem::path& dir, const SceneSpec& spec);

/// Variance of round-half-up(k / n) - k / n for k uniform on 0..n-1.
double RoundingVariance(std::int64_t n);

/// Expected gray variance of a grid-free background patch at
/// `magnification` for a spec's noise level.
double AnalyticBackgroundVariance(const SceneSpec& spec, double magnification);

/// Grid-free background patches read at `magnification` the same way the
/// pipeline reads them (base raster area-averaged by the level ratio).
std::vector<RgbImage> RenderBackgroundPatches(const SceneSpec& spec, double magnification,
                                              int count, std::uint64_t seed);

/// Blur ladder for sharpness training: each random cell scene is rendered at
/// every blur level, plus optional empty (wash only) windows labelled sharp.
struct FocusLadderConfig {
  int levels = 12;             // blur levels 0..levels-1
  int windows_per_level = 120;
  int window = focus::kDefaultWindow;
  double sigma_step = 0.4;     // blur sigma of level L is L * sigma_step
  double background_share = 0; // extra empty windows, labelled sharp
  std::uint64_t seed = 11;
};

/// Target of a ladder level: 12 * (1 - L / (levels - 1)).
double LadderTarget(int level, int levels);

struct LadderSample {
  RgbImage image;
  int level = 0;
  double target = 0;
};

std::vector<LadderSample> RenderFocusLadder(const FocusLadderConfig& config);
std::vector<focus::TrainSample> ToTrainSamples(const std::vector<LadderSample>& ladder);

}  // namespace wsiqc::synth
