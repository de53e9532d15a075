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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wsiqc/image.hpp"

// q2: FocusAttNet sharpness. One 7x7 convolution with stride 5 followed by a
// min/max pooling head,
//
//   r_f = sum_c phi_{f,c} * x_c + b_f,
//   y   = sum_f (w1_f * min(r_f) + w2_f * max(r_f)) + w3,
//
// applied to 64x64 windows on a 128-pixel grid inside each 512x512 patch.

namespace wsiqc::focus {

inline constexpr int kKernelSize = 7;
inline constexpr int kConvStride = 5;
inline constexpr int kChannels = 3;
inline constexpr int kDefaultWindow = 64;
inline constexpr int kDefaultWindowStride = 128;
inline constexpr double kScoreRange = 12.0;

struct FocusNetWeights {
  int n_filters = 0;
  std::vector<double> kernel;  // [n_filters][3][7][7]
  std::vector<double> bias;    // [n_filters]
  std::vector<double> w1;      // [n_filters], weight on min response
  std::vector<double> w2;      // [n_filters], weight on max response
  double w3 = 0;

  static FocusNetWeights Zero(int n_filters = 2);
  /// Gaussian initialisation; deterministic for a given seed.
  static FocusNetWeights Random(int n_filters, std::uint64_t seed);

  double& k(int f, int c, int y, int x) {
    return kernel[((static_cast<std::size_t>(f) * kChannels + c) * kKernelSize + y) * kKernelSize + x];
  }
  double k(int f, int c, int y, int x) const {
    return kernel[((static_cast<std::size_t>(f) * kChannels + c) * kKernelSize + y) * kKernelSize + x];
  }

  std::size_t parameter_count() const;
  std::vector<double> Flatten() const;  // kernel, bias, w1, w2, w3
  void Unflatten(std::span<const double> params);

  /// Throws MalformedModel on shape mismatch or non-finite values.
  void Validate() const;

  bool operator==(const FocusNetWeights&) const = default;
};

/// Planar float window, channel-major, values scaled to [0, 1].
struct Window {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // [3][height][width]

  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

/// Copies the w x h block at (x, y) of an RGB image into a scaled window.
Window MakeWindow(const RgbImage& img, int x, int y, int w, int h);

/// Raw score y for one window. Throws WindowTooSmall below 7x7.
double PredictWindow(const Window& x, const FocusNetWeights& w);

/// Same as PredictWindow, also accumulating dy/dparams into `grad` (which
/// must have the same shape as `w`; it is overwritten). Min/max subgradients
/// route to the extremal response, ties resolved to the lowest linear index.
double PredictWindowWithGradient(const Window& x, const FocusNetWeights& w,
                                 FocusNetWeights& grad);

/// Mean window score over the dense grid of `window`-sized windows placed
/// every `stride` pixels inside the valid region of a patch. Returns NaN when
/// no window fits.
double ScorePatch(const RgbImage& patch, const FocusNetWeights& w,
                  int window = kDefaultWindow, int stride = kDefaultWindowStride,
                  int valid_width = kPatchSize, int valid_height = kPatchSize);

struct FocusScore {
  std::vector<double> q_patch;  // one per sampled patch, enumeration order
  double mean_raw = 0;
  double q2 = 1;
};

/// q2 = clamp(mean(q_patch) / 12, 0, 1). NaN entries are skipped. Throws
/// NoContentPatches if nothing remains.
FocusScore AggregateQ2(std::vector<double> q_patch);

// ---------------------------------------------------------------------------
// Training

struct TrainSample {
  Window window;
  double target = 0;  // nominal range [0, 12]
};

struct TrainConfig {
  int n_filters = 2;
  int epochs = 120;
  double learning_rate = 0.01;
  int batch_size = 32;
  std::uint64_t seed = 7;
  /// After PLCC training, rescale (w1, w2, w3) so that the mean output at
  /// each target lands on the target; PLCC alone is blind to affine rescaling.
  bool rescale_to_targets = true;
};

struct TrainResult {
  FocusNetWeights weights;
  std::vector<double> epoch_loss;  // 1 - PLCC over the full set, per epoch
  double final_plcc = 0;
};

/// loss = 1 - PLCC(predictions, targets). Fills `grad` with dloss/dparams.
/// Throws DegenerateTargets when the targets have zero variance.
double PlccLossAndGradient(const FocusNetWeights& w, std::span<const TrainSample> batch,
                           FocusNetWeights* grad);

/// Adam on 1 - PLCC. Needs at least two distinct targets.
TrainResult TrainFocus(std::span<const TrainSample> dataset, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Weight files

std::string SerializeWeightsJson(const FocusNetWeights& w);
FocusNetWeights ParseWeightsJson(const std::string& text);

/// Binary layout: 16-byte magic "FOCUSATTNETv1\0\0\0", uint32 n_filters, then
/// little-endian float64 kernel, bias, w1, w2, w3.
std::string SerializeWeightsBinary(const FocusNetWeights& w);
FocusNetWeights ParseWeightsBinary(const std::string& bytes);

/// Detects the format from the magic bytes.
FocusNetWeights LoadWeights(const std::filesystem::path& path);
void SaveWeights(const std::filesystem::path& path, const FocusNetWeights& w,
                 bool binary = false);

/// Weights shipped with the library, trained on the synthetic blur ladder.
const FocusNetWeights& DefaultWeights();

}  // namespace wsiqc::focus
