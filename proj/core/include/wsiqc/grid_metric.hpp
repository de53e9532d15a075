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
#include <span>
#include <string>
#include <vector>

#include "wsiqc/image.hpp"

// q1: grid-like stitching artifacts, measured as the excess intensity
// variance of background patches over a calibrated grid-free reference.

namespace wsiqc::grid {

struct MeanVar {
  double mean = 0;
  double variance = 0;  // population variance
};

/// Mean and population variance of the BT.601 gray values of the top-left
/// valid_width x valid_height pixels.
MeanVar PatchMeanVar(const RgbImage& pixels, int valid_width, int valid_height);
MeanVar PatchMeanVar(const GrayImage& gray);

enum class ThresholdSource { kPercentile95, kStdUpper };

struct GridCalibration {
  double v_nogrid = 0;      // mean background variance, gray levels^2
  double percentile95 = 0;  // diagnostics only
  double std_upper = 0;     // mean + 2 sd of the sample variances, diagnostics only
  ThresholdSource threshold_source = ThresholdSource::kPercentile95;
  std::int64_t sample_count = 0;
};

inline constexpr std::size_t kMinCalibrationSamples = 30;

/// Throws TooFewSamples below 30 samples and DegenerateCalibration when the
/// mean variance is zero.
GridCalibration CalibrateGrid(std::span<const MeanVar> reference);

std::string SerializeCalibration(const GridCalibration& cal);
GridCalibration ParseCalibration(const std::string& text);
GridCalibration LoadCalibration(const std::filesystem::path& path);
void SaveCalibration(const std::filesystem::path& path, const GridCalibration& cal);

/// Summary of one background candidate at the artifact magnification.
struct BackgroundCandidate {
  std::int64_t grid_i = 0;
  std::int64_t grid_j = 0;
  double white_fraction = 0;
  bool is_white = false;
};

inline constexpr std::size_t kBackgroundPatches = 5;

/// Picks the five white patches with the highest white fraction. Among
/// patches tied at the cut-off, those nearest the four corners and then the
/// centre of the lattice win (distance ties: lowest row-major index). The
/// result is sorted row-major and does not depend on input order. Throws
/// InsufficientBackground with fewer than five white patches.
std::vector<BackgroundCandidate> SelectContentFreePatches(
    std::vector<BackgroundCandidate> candidates, std::int64_t rows, std::int64_t cols);

struct GridMeasurement {
  std::array<double, kBackgroundPatches> m_patch{};
  std::array<double, kBackgroundPatches> v_patch{};
  double v_wsi = 0;
  double deviation = 0;  // |v_wsi - v_nogrid| / v_nogrid
  double q1 = 1;
};

/// q1 = clamp(1 - |v_wsi - v_nogrid| / v_nogrid, 0, 1).
GridMeasurement ComputeQ1(std::span<const MeanVar> patches, const GridCalibration& cal);

}  // namespace wsiqc::grid
