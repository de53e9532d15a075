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
#include <string>
#include <string_view>
#include <vector>

#include "wsiqc/artifact_metrics.hpp"
#include "wsiqc/content_metrics.hpp"

// Inference artifacts produced outside the process: segmentation masks for
// markers and bubbles, and detector boxes for cells, masses and neutrophils.
//
// Directory layout:
//   detections.jsonl                      one detection object per line
//   masks/<level>_<i>_<j>_<class>.png     512x512, nonzero = covered
//   meta.json                             optional {producer, version}

namespace wsiqc::backend {

enum class Provenance { kFiles, kOracle };

std::string_view ProvenanceName(Provenance p);

struct ArtifactSet {
  std::vector<artifact::SegMask> masks;
  std::vector<content::Detection> detections;
  Provenance provenance = Provenance::kFiles;
  std::string producer;
  std::string version;

  bool operator==(const ArtifactSet&) const = default;
};

/// Missing files mean "nothing detected". Throws MalformedDetectionLine
/// (with the 1-based line number), MaskSizeMismatch or UnknownClass.
ArtifactSet LoadArtifacts(const std::filesystem::path& dir,
                          Provenance provenance = Provenance::kFiles);

/// Writes the directory layout above. Loading the result yields `set` again
/// (masks normalised to 0/255).
void SaveArtifacts(const std::filesystem::path& dir, const ArtifactSet& set);

/// One detections.jsonl line, without the newline.
std::string DetectionToJson(const content::Detection& d);
/// Throws MalformedDetectionLine carrying `line_no`.
content::Detection DetectionFromJson(std::string_view line, std::size_t line_no);

std::string MaskFileName(const artifact::SegMask& mask);

}  // namespace wsiqc::backend
