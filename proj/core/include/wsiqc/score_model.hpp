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
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wsiqc/metrics.hpp"

// Gradient-boosted regression trees over the eight metrics, producing a
// 0-10 slide score, and the archive / re-prepare / re-scan decision.

namespace wsiqc::score {

using Features = std::array<double, kMetricCount>;

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1;   // taken when x[feature] < threshold
  int right = -1;
  double leaf = 0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double Predict(const Features& x) const;
  bool operator==(const Tree&) const = default;
};

struct GbdtModel {
  double base_score = 0;
  double eta = 0.1;
  double lambda = 1;
  double gamma = 0;
  int max_depth = 3;
  std::vector<Tree> trees;
  std::vector<std::string> feature_names;

  /// base_score + eta * sum of tree outputs, unclamped.
  double PredictRaw(const Features& x) const;
  bool operator==(const GbdtModel&) const = default;
};

struct GbdtConfig {
  int rounds = 100;
  int max_depth = 3;
  double eta = 0.1;
  double lambda = 1;
  double gamma = 0;
};

struct Example {
  Features x{};
  double label = 0;
};

struct TrainResult {
  GbdtModel model;
  std::vector<double> rmse_per_round;  // training RMSE after each round
  std::vector<std::string> warnings;   // e.g. constant features
};

inline constexpr std::size_t kMinTrainingExamples = 10;

/// Squared-error boosting with exact greedy splits. Throws EmptyDataset when
/// fewer than 10 examples are given.
TrainResult TrainGbdt(std::span<const Example> data, const GbdtConfig& config = {});

inline constexpr double kMinScore = 0;
inline constexpr double kMaxScore = 10;

/// Clamped to [0, 10]. Not-evaluable metrics are expected to carry the
/// imputed value already.
double PredictScore(const GbdtModel& model, const MetricVector& q);
double PredictScore(const GbdtModel& model, const Features& x);

std::string SerializeModel(const GbdtModel& model);
GbdtModel ParseModel(const std::string& text);
GbdtModel LoadModel(const std::filesystem::path& path);
void SaveModel(const std::filesystem::path& path, const GbdtModel& model);

/// Reads `q1..q8,label` rows (header required, extra columns ignored).
std::vector<Example> LoadLabelsCsv(const std::filesystem::path& path);

/// Non-clinical labeler used for the shipped model: 10 * sum_k w_k * q_k.
inline constexpr std::array<double, kMetricCount> kRubricWeights{0.10, 0.20, 0.10, 0.10,
                                                                 0.10, 0.20, 0.10, 0.10};
double RubricLabel(const Features& q);

/// Deterministic synthetic training set drawn around clean and faulty slides.
std::vector<Example> RubricDataset(std::size_t n, std::uint64_t seed);

/// Model trained on RubricDataset with the default config; built once per
/// process.
const GbdtModel& DefaultModel();

enum class Action { kArchive, kRePrepare, kReScan, kRePrepareAndScan };

std::string_view ActionName(Action a);
Action ParseAction(std::string_view name);

inline constexpr double kArchiveAbove = 6;
inline constexpr double kFaultBelow = 0.6;

struct SlideDecision {
  double score = 0;
  Action action = Action::kRePrepare;
  std::vector<std::string> reasons;  // metrics below the fault threshold

  bool operator==(const SlideDecision&) const = default;
};

/// Scanning faults: q1, q2. Preparation faults: q3..q8.
bool IsScanningMetric(MetricId id);

SlideDecision Decide(double score, const MetricVector& q);

}  // namespace wsiqc::score
