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
#include <optional>
#include <span>
#include <vector>

// Agreement statistics between predictions and references.

namespace wsiqc::stats {

/// Pearson correlation. Throws InvalidArgument for mismatched lengths,
/// n < 2 or non-finite values, ZeroVariance when either series is constant.
double Plcc(std::span<const double> x, std::span<const double> y);

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> AverageRanks(std::span<const double> v);

/// Spearman correlation: Pearson of average ranks. Without ties this equals
/// 1 - 6 sum d^2 / (n (n^2 - 1)), which is what SrccNoTies computes.
double Srcc(std::span<const double> x, std::span<const double> y);

/// The d^2 form; only exact when neither series has ties.
double SrccNoTies(std::span<const double> x, std::span<const double> y);

bool HasTies(std::span<const double> v);

struct ConfusionStats {
  std::optional<double> accuracy;
  std::optional<double> sensitivity;  // TP / (TP + FN)
  std::optional<double> specificity;  // TN / (TN + FP)
};

/// A ratio whose denominator is zero is left empty. Negative counts throw
/// InvalidArgument.
ConfusionStats Confusion(std::int64_t tp, std::int64_t tn, std::int64_t fp, std::int64_t fn);

}  // namespace wsiqc::stats
