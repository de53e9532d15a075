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
#include <span>
#include <string_view>
#include <vector>

#include "wsiqc/image.hpp"

// q3 (pen markers) and q4 (air/gel bubbles) from per-patch segmentation
// masks produced by a backend.

namespace wsiqc::artifact {

enum class MaskClass { kMarker, kBubble };

std::string_view MaskClassName(MaskClass c);
/// Throws UnknownClass.
MaskClass ParseMaskClass(std::string_view name);

struct SegMask {
  double magnification = 0;
  std::int64_t grid_i = 0;
  std::int64_t grid_j = 0;
  MaskClass mask_class = MaskClass::kMarker;
  GrayImage bits;  // kPatchSize x kPatchSize, nonzero = covered

  bool operator==(const SegMask&) const = default;
};

/// Covered pixels / (512 * 512).
double PatchOcclusion(const SegMask& mask);

struct OcclusionScore {
  double quality = 1;              // 1 - mean occlusion over all content patches
  double detected_only_mean = 0;   // mean ratio over patches with detections
  std::int64_t detected_patches = 0;
  std::int64_t content_patches = 0;
};

/// Quality from per-patch ratios of the patches where the class was found.
/// Patches without detections count as zero occlusion. Throws
/// NoContentPatches for m = 0 and InvalidArgument when ratios outnumber m.
OcclusionScore AggregateOcclusion(std::span<const double> ratios,
                                  std::int64_t total_content_patches);

}  // namespace wsiqc::artifact
