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

#include "wsiqc/image.hpp"

#include <algorithm>
#include <cstring>

#include "wsiqc/error.hpp"

namespace wsiqc {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kCorruptPyramid: return "CorruptPyramid";
    case ErrorCode::kMagnificationUnavailable: return "MagnificationUnavailable";
    case ErrorCode::kInsufficientBackground: return "InsufficientBackground";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kDegenerateCalibration: return "DegenerateCalibration";
    case ErrorCode::kWindowTooSmall: return "WindowTooSmall";
    case ErrorCode::kDegenerateTargets: return "DegenerateTargets";
    case ErrorCode::kNoContentPatches: return "NoContentPatches";
    case ErrorCode::kZeroContentArea: return "ZeroContentArea";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kMalformedDetectionLine: return "MalformedDetectionLine";
    case ErrorCode::kMaskSizeMismatch: return "MaskSizeMismatch";
    case ErrorCode::kUnknownClass: return "UnknownClass";
    case ErrorCode::kSpecOutOfBounds: return "SpecOutOfBounds";
    case ErrorCode::kMalformedModel: return "MalformedModel";
  }
  return "Unknown";
}

bool IsInputError(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kIo:
    case ErrorCode::kUnsupportedFormat:
    case ErrorCode::kCorruptPyramid:
    case ErrorCode::kMagnificationUnavailable:
    case ErrorCode::kMalformedDetectionLine:
    case ErrorCode::kMaskSizeMismatch:
    case ErrorCode::kUnknownClass:
    case ErrorCode::kSpecOutOfBounds:
    case ErrorCode::kMalformedModel:
      return true;
    default:
      return false;
  }
}

GrayImage ToGray(const RgbImage& rgb) {
  GrayImage out(rgb.width, rgb.height);
  const std::size_t n = rgb.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = rgb.data.data() + i * 3;
    out.data[i] = Bt601Gray(p[0], p[1], p[2]);
  }
  return out;
}

RgbImage Crop(const RgbImage& src, int x, int y, int w, int h) {
  RgbImage out(w, h, 0);
  const int x0 = std::max(x, 0);
  const int x1 = std::min(x + w, src.width);
  if (x1 <= x0) return out;
  for (int yy = std::max(y, 0); yy < std::min(y + h, src.height); ++yy) {
    std::memcpy(out.px(x0 - x, yy - y), src.px(x0, yy),
                static_cast<std::size_t>(x1 - x0) * 3);
  }
  return out;
}

}  // namespace wsiqc
