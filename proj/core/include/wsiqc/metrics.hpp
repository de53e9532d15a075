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
#include <optional>
#include <string_view>

namespace wsiqc {

/// The eight slide quality metrics. Every value lies in [0, 1]; lower means a
/// more severe problem.
enum class MetricId : int {
  kGrid = 0,        // q1 grid-like stitching artifacts
  kFocus = 1,       // q2 sharpness
  kMarker = 2,      // q3 pen marker occlusion
  kBubble = 3,      // q4 air/gel bubble occlusion
  kStain = 4,       // q5 staining standard
  kCellCount = 5,   // q6 squamous cell count
  kCellMass = 6,    // q7 cell masses
  kNeutrophil = 7,  // q8 neutrophil coverage
};

inline constexpr int kMetricCount = 8;

constexpr int Index(MetricId id) { return static_cast<int>(id); }

std::string_view MetricName(MetricId id);  // "q1".."q8"
std::string_view MetricName(int index);
std::optional<MetricId> MetricFromName(std::string_view name);

/// Value substituted for metrics that could not be evaluated.
inline constexpr double kImputedValue = 1.0;

struct MetricVector {
  std::array<double, kMetricCount> values{1, 1, 1, 1, 1, 1, 1, 1};
  std::array<bool, kMetricCount> evaluable{};

  double operator[](MetricId id) const { return values[Index(id)]; }
  double& operator[](MetricId id) { return values[Index(id)]; }

  void Set(MetricId id, double v) {
    values[Index(id)] = v;
    evaluable[Index(id)] = true;
  }
  void MarkNotEvaluable(MetricId id) {
    values[Index(id)] = kImputedValue;
    evaluable[Index(id)] = false;
  }

  static MetricVector FromValues(const std::array<double, kMetricCount>& v) {
    MetricVector m;
    m.values = v;
    m.evaluable.fill(true);
    return m;
  }

  bool operator==(const MetricVector&) const = default;
};

}  // namespace wsiqc
