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

#include "wsiqc/grid_metric.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "wsiqc/error.hpp"

namespace wsiqc::grid {

using json = nlohmann::json;

namespace {

// Exact in 64-bit integers for any patch up to 2^24 pixels.
MeanVar FromSums(std::int64_t n, std::int64_t sum, std::int64_t sum_sq) {
  if (n == 0) return {};
  const double dn = static_cast<double>(n);
  MeanVar mv;
  mv.mean = static_cast<double>(sum) / dn;
  mv.variance = static_cast<double>(n * sum_sq - sum * sum) / (dn * dn);
  return mv;
}

double Percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

MeanVar PatchMeanVar(const RgbImage& pixels, int valid_width, int valid_height) {
  std::int64_t sum = 0, sum_sq = 0;
  for (int y = 0; y < valid_height; ++y) {
    const std::uint8_t* p = pixels.px(0, y);
    for (int x = 0; x < valid_width; ++x, p += 3) {
      const std::int64_t g = Bt601Gray(p[0], p[1], p[2]);
      sum += g;
      sum_sq += g * g;
    }
  }
  return FromSums(static_cast<std::int64_t>(valid_width) * valid_height, sum, sum_sq);
}

MeanVar PatchMeanVar(const GrayImage& gray) {
  std::int64_t sum = 0, sum_sq = 0;
  for (const std::uint8_t v : gray.data) {
    sum += v;
    sum_sq += static_cast<std::int64_t>(v) * v;
  }
  return FromSums(static_cast<std::int64_t>(gray.data.size()), sum, sum_sq);
}

GridCalibration CalibrateGrid(std::span<const MeanVar> reference) {
  if (reference.size() < kMinCalibrationSamples) {
    throw Error(ErrorCode::kTooFewSamples,
                "grid calibration needs at least 30 background patches, got " +
                    std::to_string(reference.size()));
  }
  std::vector<double> vars;
  vars.reserve(reference.size());
  for (const MeanVar& mv : reference) vars.push_back(mv.variance);
  const double n = static_cast<double>(vars.size());
  const double mean = std::accumulate(vars.begin(), vars.end(), 0.0) / n;
  if (!(mean > 0)) {
    throw Error(ErrorCode::kDegenerateCalibration,
                "reference patches have zero variance");
  }
  double ss = 0;
  for (double v : vars) ss += (v - mean) * (v - mean);
  GridCalibration cal;
  cal.v_nogrid = mean;
  cal.percentile95 = Percentile(vars, 0.95);
  cal.std_upper = mean + 2.0 * std::sqrt(ss / (n - 1));
  cal.sample_count = static_cast<std::int64_t>(vars.size());
  return cal;
}

std::string SerializeCalibration(const GridCalibration& cal) {
  json j{{"v_nogrid", cal.v_nogrid},
         {"percentile95", cal.percentile95},
         {"std_upper", cal.std_upper},
         {"threshold_source",
          cal.threshold_source == ThresholdSource::kPercentile95 ? "percentile95" : "std_upper"},
         {"sample_count", cal.sample_count},
         {"grayscale", "bt601"}};
  return j.dump(2);
}

GridCalibration ParseCalibration(const std::string& text) {
  GridCalibration cal;
  try {
    const json j = json::parse(text);
    cal.v_nogrid = j.at("v_nogrid").get<double>();
    cal.percentile95 = j.value("percentile95", 0.0);
    cal.std_upper = j.value("std_upper", 0.0);
    cal.threshold_source = j.value("threshold_source", std::string("percentile95")) == "std_upper"
                               ? ThresholdSource::kStdUpper
                               : ThresholdSource::kPercentile95;
    cal.sample_count = j.value("sample_count", std::int64_t{1});
    if (j.value("grayscale", std::string("bt601")) != "bt601") {
      throw Error(ErrorCode::kMalformedModel, "only bt601 grayscale calibrations are supported");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedModel, std::string("grid calibration: ") + e.what());
  }
  if (!(cal.v_nogrid > 0)) {
    throw Error(ErrorCode::kDegenerateCalibration, "v_nogrid must be positive");
  }
  if (cal.sample_count < 1) throw Error(ErrorCode::kMalformedModel, "sample_count must be >= 1");
  return cal;
}

GridCalibration LoadCalibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseCalibration(ss.str());
}

void SaveCalibration(const std::filesystem::path& path, const GridCalibration& cal) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << SerializeCalibration(cal) << '\n';
}

std::vector<BackgroundCandidate> SelectContentFreePatches(
    std::vector<BackgroundCandidate> candidates, std::int64_t rows, std::int64_t cols) {
  std::erase_if(candidates, [](const BackgroundCandidate& c) { return !c.is_white; });
  if (candidates.size() < kBackgroundPatches) {
    throw Error(ErrorCode::kInsufficientBackground,
                "need 5 white patches, found " + std::to_string(candidates.size()));
  }
  auto linear = [cols](const BackgroundCandidate& c) { return c.grid_i * cols + c.grid_j; };
  std::sort(candidates.begin(), candidates.end(),
            [&](const auto& a, const auto& b) { return linear(a) < linear(b); });

  std::vector<double> fractions;
  for (const auto& c : candidates) fractions.push_back(c.white_fraction);
  std::nth_element(fractions.begin(), fractions.begin() + (kBackgroundPatches - 1),
                   fractions.end(), std::greater<>());
  const double cutoff = fractions[kBackgroundPatches - 1];

  std::vector<BackgroundCandidate> chosen;
  std::vector<const BackgroundCandidate*> tied;
  for (const auto& c : candidates) {
    if (c.white_fraction > cutoff) {
      chosen.push_back(c);
    } else if (c.white_fraction == cutoff) {
      tied.push_back(&c);
    }
  }

  const double last_r = static_cast<double>(rows - 1), last_c = static_cast<double>(cols - 1);
  const std::array<std::pair<double, double>, 5> targets = {{
      {0, 0}, {0, last_c}, {last_r, 0}, {last_r, last_c}, {last_r / 2, last_c / 2}}};
  std::vector<bool> used(tied.size(), false);
  while (chosen.size() < kBackgroundPatches) {
    for (const auto& [tr, tc] : targets) {
      if (chosen.size() >= kBackgroundPatches) break;
      std::size_t best = tied.size();
      double best_d = 0;
      for (std::size_t k = 0; k < tied.size(); ++k) {
        if (used[k]) continue;
        const double dr = static_cast<double>(tied[k]->grid_i) - tr;
        const double dc = static_cast<double>(tied[k]->grid_j) - tc;
        const double d = dr * dr + dc * dc;
        if (best == tied.size() || d < best_d) {
          best = k;
          best_d = d;
        }
      }
      if (best == tied.size()) break;
      used[best] = true;
      chosen.push_back(*tied[best]);
    }
  }
  std::sort(chosen.begin(), chosen.end(),
            [&](const auto& a, const auto& b) { return linear(a) < linear(b); });
  return chosen;
}

GridMeasurement ComputeQ1(std::span<const MeanVar> patches, const GridCalibration& cal) {
  if (patches.size() != kBackgroundPatches) {
    throw Error(ErrorCode::kInvalidArgument, "q1 needs exactly five background patches");
  }
  if (!(cal.v_nogrid > 0)) {
    throw Error(ErrorCode::kDegenerateCalibration, "v_nogrid must be positive");
  }
  GridMeasurement m;
  double sum = 0;
  for (std::size_t k = 0; k < kBackgroundPatches; ++k) {
    m.m_patch[k] = patches[k].mean;
    m.v_patch[k] = patches[k].variance;
    sum += patches[k].variance;
  }
  m.v_wsi = sum / static_cast<double>(kBackgroundPatches);
  m.deviation = std::abs(m.v_wsi - cal.v_nogrid) / cal.v_nogrid;
  m.q1 = std::clamp(1.0 - m.deviation, 0.0, 1.0);
  return m;
}

}  // namespace wsiqc::grid
