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

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "wsiqc/image.hpp"

// q6 (squamous cell count), q7 (cell masses) and q8 (neutrophil coverage)
// from detector boxes produced by a backend.

namespace wsiqc::content {

enum class DetectionClass { kSquamousCell, kCellMass, kNeutrophil };

std::string_view DetectionClassName(DetectionClass c);
/// Throws UnknownClass.
DetectionClass ParseDetectionClass(std::string_view name);

struct Box {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool operator==(const Box&) const = default;
  auto operator<=>(const Box&) const = default;
};

struct Detection {
  double magnification = 0;
  std::int64_t grid_i = 0;  // patch row
  std::int64_t grid_j = 0;  // patch column
  DetectionClass cls = DetectionClass::kSquamousCell;
  Box box;
  double conf = 1;

  bool operator==(const Detection&) const = default;
};

/// Empty string when valid, otherwise the reason.
std::string_view DetectionProblem(const Detection& d);

inline constexpr double kConfidenceFloor = 0.5;
inline constexpr double kBorderBand = 16;
inline constexpr double kBorderOverlap = 0.5;

/// Number of distinct objects of class `cls` with confidence >= floor.
/// Fragments of one object clipped at a patch border are merged: two boxes in
/// edge-adjacent patches match when both touch the shared edge, both centres
/// lie within 16 px of it and their extents along the edge overlap with
/// IoU >= 0.5. Matches are merged transitively, so an object cut at a patch
/// corner still counts once.
std::int64_t CountObjects(std::span<const Detection> detections, DetectionClass cls,
                          double confidence_floor = kConfidenceFloor);

inline std::int64_t CountCells(std::span<const Detection> detections,
                               double confidence_floor = kConfidenceFloor) {
  return CountObjects(detections, DetectionClass::kSquamousCell, confidence_floor);
}

inline constexpr std::int64_t kAdequateCellCount = 5000;
inline constexpr std::int64_t kMassAllowance = 50;

double Q6FromCount(std::int64_t x);
double Q7FromMassCount(std::int64_t mass_count);

struct OtsuResult {
  int threshold = 0;        // foreground is gray <= threshold
  double separability = 0;  // between-class / total variance, 0 for flat input
  double mean_gap = 0;      // background mean - foreground mean
};

OtsuResult Otsu(std::span<const std::int64_t, 256> histogram);

/// Below either bound the box is treated as a single mode and has no
/// foreground.
inline constexpr double kMinSeparability = 0.8;
inline constexpr double kMinMeanGap = 8;

/// Foreground mask of one box: Otsu on BT.601 gray inside the box, darker
/// side. `mask` (same size as the patch) receives 255 on foreground pixels.
/// Returns the number of foreground pixels set by this box.
std::int64_t SegmentBox(const GrayImage& gray, const Box& box, GrayImage* mask = nullptr);

/// Foreground pixel count inside one box.
std::int64_t BoxArea(const GrayImage& gray, const Box& box);
std::int64_t BoxArea(const RgbImage& patch, const Box& box);

/// Union of the box foregrounds of one patch, so overlapping boxes are not
/// counted twice.
std::int64_t PatchNeutrophilArea(const GrayImage& gray, std::span<const Box> boxes);

enum class TbsAnnotation { kNone, kInflammatoryObscuration, kUnsatisfactory };

std::string_view TbsAnnotationName(TbsAnnotation a);
std::optional<TbsAnnotation> ParseTbsAnnotation(std::string_view name);

struct NeutrophilScore {
  double q8 = 1;
  double coverage = 0;
  TbsAnnotation annotation = TbsAnnotation::kNone;
};

/// Throws ZeroContentArea for s_total <= 0.
NeutrophilScore Q8FromAreas(double s_neutrophil, double s_total);

struct ContentMeasurement {
  std::int64_t cell_count = 0;
  std::int64_t mass_count = 0;
  double s_total = 0;
  double s_neutrophil = 0;
  double q6 = 0;
  double q7 = 1;
  double q8 = 1;
  TbsAnnotation tbs_annotation = TbsAnnotation::kNone;
};

}  // namespace wsiqc::content
