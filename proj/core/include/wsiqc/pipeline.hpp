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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wsiqc/backends.hpp"
#include "wsiqc/content_metrics.hpp"
#include "wsiqc/error.hpp"
#include "wsiqc/metrics.hpp"
#include "wsiqc/pyramid.hpp"
#include "wsiqc/score_model.hpp"

// Slide evaluation: a low-power pass for stitching, pen and bubble artifacts,
// a high-power pass for focus, stain and content, then fusion and decision.

namespace wsiqc::pipeline {

enum class BackendKind { kNone, kFiles, kOracle };

struct PipelineConfig {
  double artifact_magnification = 4;  // q1, q3, q4
  double content_magnification = 20;  // q2, q5, q6, q7, q8
  int sample_every = 1;               // q2 uses every k-th content patch
  int focus_window = 64;
  int focus_stride = 128;
  int workers = 0;                    // 0 = hardware concurrency
  double confidence_floor = content::kConfidenceFloor;
  bool adaptive_stain_basis = false;

  std::optional<std::filesystem::path> grid_calibration;
  std::optional<std::filesystem::path> stain_calibration;
  std::optional<std::filesystem::path> focus_weights;
  std::optional<std::filesystem::path> score_model;

  BackendKind backend = BackendKind::kNone;
  /// kFiles: the artifact directory. kOracle: empty means "oracle" next to
  /// the slide.
  std::filesystem::path backend_dir;

  /// Throws InvalidArgument.
  void Validate() const;
};

/// Reads a TOML file; keys mirror the struct, grouped in [magnification],
/// [focus], [content], [stain], [grid], [score], [backend] and [runtime]
/// tables. Relative paths resolve against the file's directory.
PipelineConfig LoadConfig(const std::filesystem::path& path);
PipelineConfig ParseConfig(const std::string& toml_text,
                           const std::filesystem::path& base_dir = {});

/// Canonical JSON of everything that can change metric values (the worker
/// count is left out).
std::string CanonicalConfig(const PipelineConfig& config);
/// 16 hex digits of FNV-1a 64 over CanonicalConfig.
std::string ConfigHash(const PipelineConfig& config);

/// "--backend" syntax: "none", "oracle", "oracle:<dir>" or "files:<dir>".
void ParseBackendSelector(const std::string& text, PipelineConfig& config);

struct MetricEntry {
  double value = kImputedValue;
  bool evaluable = false;
  std::map<std::string, double> raw;
  std::vector<std::string> warnings;

  bool operator==(const MetricEntry&) const = default;
};

struct StageTiming {
  std::string stage;
  double seconds = 0;
  bool operator==(const StageTiming&) const = default;
};

struct QualityReport {
  std::string slide_id;
  std::array<MetricEntry, kMetricCount> metrics;
  std::optional<double> score;
  std::optional<score::SlideDecision> decision;
  content::TbsAnnotation tbs_annotation = content::TbsAnnotation::kNone;
  std::string backend;  // "none", "files" or "oracle"
  std::int64_t artifact_patches = 0;
  std::int64_t content_patches = 0;
  std::vector<StageTiming> timings;
  std::string config_hash;
  std::string version;

  MetricVector Vector() const;
  bool operator==(const QualityReport&) const = default;
};

/// Deterministic JSON. Without timings the bytes depend only on the slide,
/// the artifacts and the configuration.
std::string SerializeReport(const QualityReport& report, bool include_timings = true);
QualityReport ParseReport(const std::string& text);

/// Per-patch values of one metric on one patch lattice, for heatmaps.
struct PatchScoreMap {
  std::string metric;
  double magnification = 0;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<std::optional<double>> values;  // row-major

  bool operator==(const PatchScoreMap&) const = default;
};

struct Evaluation {
  QualityReport report;
  std::vector<PatchScoreMap> patch_scores;
};

/// Error raised while evaluating, tagged with the stage that failed:
/// "open", "config", "tiling", "backend", "artifact", "content" or "scoring".
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.code(), "stage " + stage + ": " + cause.what()),
        stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Evaluates an open slide. `artifacts` may be null (no backend).
Evaluation EvaluateSlide(const SlideHandle& slide, const backend::ArtifactSet* artifacts,
                         const PipelineConfig& config);

/// Opens the slide and the configured backend, then evaluates. `opened`
/// receives the slide handle, e.g. for heatmaps.
Evaluation Evaluate(const std::filesystem::path& slide_path, const PipelineConfig& config,
                    SlideHandle* opened = nullptr);

/// Gray thumbnail with one colour cell per patch. Scores are min-max
/// normalised over the patches that have one (all 0.5 when they are equal)
/// and blended over the thumbnail; patches without a score stay gray.
void EmitHeatmap(const SlidePyramid& slide, const PatchScoreMap& scores,
                 const std::filesystem::path& out_path, int cell_pixels = 32);

/// Normalised value in [0, 1] per patch, as used for the colours.
std::vector<std::optional<double>> NormalizeScores(const PatchScoreMap& scores);

/// RGB of the colour map at t in [0, 1].
std::array<std::uint8_t, 3> ColorMap(double t);

struct BatchRow {
  std::string slide;
  std::optional<QualityReport> report;
  std::string error;
};

struct BatchResult {
  std::vector<BatchRow> rows;
  std::string summary_csv;
};

/// Evaluates each slide independently; a failing slide becomes an error row.
BatchResult BatchEvaluate(const std::vector<std::filesystem::path>& slides,
                          const PipelineConfig& config);

/// One path per line; blank lines and '#' comments skipped; relative paths
/// resolve against the list file's directory.
std::vector<std::filesystem::path> ReadSlideList(const std::filesystem::path& list_file);

std::string SummaryCsvHeader();

}  // namespace wsiqc::pipeline
