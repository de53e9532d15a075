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
#include <span>
#include <string>
#include <vector>

#include "wsiqc/image.hpp"

// q5: staining standard. Hematoxylin and eosin are separated by colour
// deconvolution in optical-density space, thresholded into masks, and the
// mean BT.601 gray of the masked original pixels is compared with a
// calibrated range per stain.

namespace wsiqc::stain {

using Vec3 = std::array<double, 3>;

struct StainBasis {
  Vec3 hematoxylin{0.650, 0.704, 0.286};
  Vec3 eosin{0.072, 0.990, 0.105};
  Vec3 background{255, 255, 255};  // I0 per channel

  /// The standard H&E optical-density vectors, normalised.
  static StainBasis Default();
  /// Normalises both vectors; throws InvalidArgument if a vector has a
  /// negative component or the pair is (nearly) collinear.
  void Normalize();

  bool operator==(const StainBasis&) const = default;
};

struct Concentrations {
  double hematoxylin = 0;
  double eosin = 0;
};

/// Per-pixel deconvolution with a fixed basis. OD = -log10(max(I,1)/I0),
/// concentrations = pinv([h e]) * OD with negatives clamped to zero.
class Deconvolver {
 public:
  explicit Deconvolver(const StainBasis& basis);

  Concentrations Pixel(std::uint8_t r, std::uint8_t g, std::uint8_t b) const;
  /// Unquantised intensities: no lookup table, and the floor is 1e-9 rather
  /// than the 8-bit floor of 1.
  Concentrations Intensity(const Vec3& rgb) const;
  const StainBasis& basis() const { return basis_; }

 private:
  StainBasis basis_;
  std::array<std::array<double, 256>, 3> od_lut_{};
  std::array<std::array<double, 3>, 2> pinv_{};
};

/// Beer-Lambert forward model: I_c = I0_c * 10^-(c_h * h_c + c_e * e_c).
Vec3 RenderIntensity(const StainBasis& basis, const Concentrations& c);

struct ConcentrationMaps {
  int width = 0;
  int height = 0;
  std::vector<double> hematoxylin;
  std::vector<double> eosin;
};

ConcentrationMaps Deconvolve(const RgbImage& patch, const StainBasis& basis);

struct BasisEstimate {
  StainBasis basis;
  bool adaptive_failed = false;
  std::int64_t pixels_used = 0;
};

inline constexpr std::int64_t kMinBasisPixels = 1000;
inline constexpr double kBasisOdThreshold = 0.15;

/// Macenko-style estimate: principal plane of the optical densities above
/// 0.15, then the 1st/99th percentile angles inside that plane. Falls back to
/// `fallback` (flagging adaptive_failed) with fewer than 1000 usable pixels
/// or a rank-1 optical-density cloud.
BasisEstimate EstimateBasis(std::span<const RgbImage> patches,
                            const StainBasis& fallback = StainBasis::Default());

/// Running sum of gray values under one stain mask.
struct GraySum {
  double sum = 0;
  std::int64_t count = 0;

  GraySum& operator+=(const GraySum& o) {
    sum += o.sum;
    count += o.count;
    return *this;
  }
  std::optional<double> mean() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
};

inline constexpr double kDefaultTau = 0.15;

/// Gray of the original pixels whose concentration exceeds tau, restricted
/// to the top-left valid region.
GraySum ChannelGray(const RgbImage& patch, std::span<const double> concentration, double tau,
                    int valid_width = kPatchSize, int valid_height = kPatchSize);

struct PatchStain {
  GraySum hematoxylin;
  GraySum eosin;
};

PatchStain MeasurePatch(const RgbImage& patch, const Deconvolver& deconvolver, double tau,
                        int valid_width = kPatchSize, int valid_height = kPatchSize);

struct GrayRange {
  double min = 0;
  double max = 0;
  bool operator==(const GrayRange&) const = default;
};

/// 1 inside [min, max]; above, 1 - (v - max) / max down to 0 at 2*max;
/// below, 1 - (min - v) / min down to 0 at v = 0.
double ScoreChannel(double v_gray, const GrayRange& range);

struct StainCalibration {
  GrayRange hematoxylin{180, 200};
  GrayRange eosin{185, 190};
  StainBasis basis = StainBasis::Default();
  double tau = kDefaultTau;
  std::int64_t sample_count = 0;  // 0 for the shipped defaults

  void Validate() const;
  bool operator==(const StainCalibration&) const = default;
};

inline constexpr std::size_t kMinStainReferences = 20;

/// Per-slide mean gray of each stain for a reference slide.
struct ReferenceGray {
  double hematoxylin = 0;
  double eosin = 0;
};

/// Range per channel = [mean - 2 sd, mean + 2 sd] clipped to [0, 255].
/// Throws TooFewSamples below 20 slides.
StainCalibration CalibrateStain(std::span<const ReferenceGray> references,
                                const StainCalibration& base = {});

std::string SerializeCalibration(const StainCalibration& cal);
StainCalibration ParseCalibration(const std::string& text);
StainCalibration LoadCalibration(const std::filesystem::path& path);
void SaveCalibration(const std::filesystem::path& path, const StainCalibration& cal);

struct StainMeasurement {
  std::optional<double> v_gray_hematoxylin;
  std::optional<double> v_gray_eosin;
  std::int64_t count_hematoxylin = 0;
  std::int64_t count_eosin = 0;
  std::optional<double> score_hematoxylin;
  std::optional<double> score_eosin;
  std::optional<double> q5;  // min of the evaluable channel scores
};

StainMeasurement ScoreStain(const PatchStain& totals, const StainCalibration& cal);

}  // namespace wsiqc::stain
