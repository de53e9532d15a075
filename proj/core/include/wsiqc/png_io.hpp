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

#include <filesystem>

#include "wsiqc/image.hpp"

namespace wsiqc {

RgbImage ReadPngRgb(const std::filesystem::path& path);

/// Reads any PNG as 8-bit gray; 1-bit images expand to 0/255.
GrayImage ReadPngGray(const std::filesystem::path& path);

/// zlib level 1 by default: tiles are noisy and rarely compress much further.
void WritePngRgb(const std::filesystem::path& path, const RgbImage& img,
                 int compression_level = 1);
void WritePngGray(const std::filesystem::path& path, const GrayImage& img,
                  int compression_level = 6);

/// Writes a 1-bit grayscale PNG; any nonzero input pixel becomes 1.
void WritePngMask(const std::filesystem::path& path, const GrayImage& bits);

}  // namespace wsiqc
