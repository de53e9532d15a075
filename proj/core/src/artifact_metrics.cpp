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

#include "wsiqc/artifact_metrics.hpp"

#include <algorithm>
#include <string>

#include "wsiqc/error.hpp"

namespace wsiqc::artifact {

std::string_view MaskClassName(MaskClass c) {
  return c == MaskClass::kMarker ? "marker" : "bubble";
}

MaskClass ParseMaskClass(std::string_view name) {
  if (name == "marker") return MaskClass::kMarker;
  if (name == "bubble") return MaskClass::kBubble;
  throw Error(ErrorCode::kUnknownClass, "unknown mask class '" + std::string(name) + "'");
}

double PatchOcclusion(const SegMask& mask) {
  const auto covered = std::count_if(mask.bits.data.begin(), mask.bits.data.end(),
                                     [](std::uint8_t v) { return v != 0; });
  return static_cast<double>(covered) / (static_cast<double>(kPatchSize) * kPatchSize);
}

OcclusionScore AggregateOcclusion(std::span<const double> ratios,
                                  std::int64_t total_content_patches) {
  if (total_content_patches <= 0) {
    throw Error(ErrorCode::kNoContentPatches, "occlusion needs at least one content patch");
  }
  if (static_cast<std::int64_t>(ratios.size()) > total_content_patches) {
    throw Error(ErrorCode::kInvalidArgument, "more detected patches than content patches");
  }
  OcclusionScore s;
  s.detected_patches = static_cast<std::int64_t>(ratios.size());
  s.content_patches = total_content_patches;
  double sum = 0;
  for (double r : ratios) sum += std::clamp(r, 0.0, 1.0);
  s.detected_only_mean = ratios.empty() ? 0.0 : sum / static_cast<double>(ratios.size());
  s.quality = std::clamp(1.0 - sum / static_cast<double>(total_content_patches), 0.0, 1.0);
  return s;
}

}  // namespace wsiqc::artifact
