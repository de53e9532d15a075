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

#include <stdexcept>
#include <string>
#include <string_view>

namespace wsiqc {

enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kUnsupportedFormat,
  kCorruptPyramid,
  kMagnificationUnavailable,
  kInsufficientBackground,
  kTooFewSamples,
  kDegenerateCalibration,
  kWindowTooSmall,
  kDegenerateTargets,
  kNoContentPatches,
  kZeroContentArea,
  kZeroVariance,
  kEmptyDataset,
  kMalformedDetectionLine,
  kMaskSizeMismatch,
  kUnknownClass,
  kSpecOutOfBounds,
  kMalformedModel,
};

std::string_view ErrorCodeName(ErrorCode code);

/// Exception type for every recoverable failure in the library. The code is
/// stable and is what callers and tests branch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// True for errors caused by bad or unreadable inputs, as opposed to a
/// failure while evaluating otherwise valid data.
bool IsInputError(ErrorCode code);

}  // namespace wsiqc
