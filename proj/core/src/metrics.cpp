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

#include "wsiqc/metrics.hpp"

namespace wsiqc {

namespace {
constexpr std::array<std::string_view, kMetricCount> kNames = {
    "q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8"};
}  // namespace

std::string_view MetricName(MetricId id) { return kNames[Index(id)]; }
std::string_view MetricName(int index) { return kNames.at(static_cast<std::size_t>(index)); }

std::optional<MetricId> MetricFromName(std::string_view name) {
  for (int k = 0; k < kMetricCount; ++k) {
    if (kNames[k] == name) return static_cast<MetricId>(k);
  }
  return std::nullopt;
}

}  // namespace wsiqc
