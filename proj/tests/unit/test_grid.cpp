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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "wsiqc/grid_metric.hpp"
#include "wsiqc/synth.hpp"

using namespace wsiqc;
using namespace wsiqc::grid;

namespace {

std::vector<MeanVar> Samples(std::initializer_list<double> variances) {
  std::vector<MeanVar> out;
  for (double v : variances) out.push_back({220, v});
  return out;
}

GridCalibration Calibration(double v_nogrid) {
  GridCalibration cal;
  cal.v_nogrid = v_nogrid;
  cal.sample_count = 30;
  return cal;
}

}  // namespace

TEST_CASE("patch mean and population variance of the gray image") {
  RgbImage img(4, 1);
  const std::uint8_t vals[4] = {10, 20, 30, 40};
  for (int x = 0; x < 4; ++x) img.px(x, 0)[0] = img.px(x, 0)[1] = img.px(x, 0)[2] = vals[x];
  const MeanVar mv = PatchMeanVar(img, 4, 1);
  CHECK(mv.mean == doctest::Approx(25));
  CHECK(mv.variance == doctest::Approx(125));  // population, not sample
  CHECK(PatchMeanVar(ToGray(img)).variance == doctest::Approx(125));

  // Only the valid region counts.
  CHECK(PatchMeanVar(img, 2, 1).variance == doctest::Approx(25));
}

TEST_CASE("gray conversion is integer BT.601") {
  CHECK(Bt601Gray(255, 255, 255) == 255);
  CHECK(Bt601Gray(0, 0, 0) == 0);
  CHECK(Bt601Gray(255, 0, 0) == 76);  // 76.245
  CHECK(Bt601Gray(0, 255, 0) == 150);  // 149.685
  CHECK(Bt601Gray(0, 0, 255) == 29);  // 29.07
  CHECK(Bt601Gray(10, 20, 30) == 18);  // 17.9
}

TEST_CASE("calibration") {
  std::vector<MeanVar> ref;
  for (int i = 1; i <= 40; ++i) ref.push_back({225, static_cast<double>(i)});
  const GridCalibration cal = CalibrateGrid(ref);
  CHECK(cal.v_nogrid == doctest::Approx(20.5));
  CHECK(cal.sample_count == 40);
  CHECK(cal.percentile95 >= 38);
  CHECK(cal.percentile95 <= 39);
  CHECK(cal.std_upper > cal.v_nogrid);

  const GridCalibration back = ParseCalibration(SerializeCalibration(cal));
  CHECK(back.v_nogrid == cal.v_nogrid);
  CHECK(back.percentile95 == cal.percentile95);
  CHECK(back.sample_count == cal.sample_count);

  CHECK_THROWS_CODE(CalibrateGrid(Samples({1, 2, 3})), ErrorCode::kTooFewSamples);
  std::vector<MeanVar> zero(30, MeanVar{230, 0});
  CHECK_THROWS_CODE(CalibrateGrid(zero), ErrorCode::kDegenerateCalibration);
  CHECK_THROWS_CODE(ParseCalibration(R"({"v_nogrid": 0, "sample_count": 3})"),
                    ErrorCode::kDegenerateCalibration);
  CHECK_THROWS_CODE(ParseCalibration("[1,2"), ErrorCode::kMalformedModel);
}

TEST_CASE("q1 from five background patches") {
  const GridCalibration cal = Calibration(16);
  GridMeasurement m = ComputeQ1(Samples({16, 16, 16, 16, 16}), cal);
  CHECK(m.q1 == 1.0);
  CHECK(m.v_wsi == 16);

  m = ComputeQ1(Samples({20, 20, 20, 20, 20}), cal);
  CHECK(m.deviation == doctest::Approx(0.25));
  CHECK(m.q1 == doctest::Approx(0.75));

  // Below the reference is penalised symmetrically.
  CHECK(ComputeQ1(Samples({12, 12, 12, 12, 12}), cal).q1 == doctest::Approx(0.75));
  CHECK(ComputeQ1(Samples({100, 100, 100, 100, 100}), cal).q1 == 0.0);

  CHECK_THROWS_CODE(ComputeQ1(Samples({16, 16, 16, 16}), cal), ErrorCode::kInvalidArgument);
  CHECK_THROWS_CODE(ComputeQ1(Samples({16, 16, 16, 16, 16}), Calibration(0)),
                    ErrorCode::kDegenerateCalibration);
}

TEST_CASE("q1 stays in range and is monotone in the deviation") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> v(0, 80);
  const GridCalibration cal = Calibration(16);
  for (int i = 0; i < 500; ++i) {
    const double a = v(rng), b = v(rng);
    const double qa = ComputeQ1(Samples({a, a, a, a, a}), cal).q1;
    const double qb = ComputeQ1(Samples({b, b, b, b, b}), cal).q1;
    REQUIRE(qa >= 0);
    REQUIRE(qa <= 1);
    if (std::abs(a - 16) < std::abs(b - 16)) REQUIRE(qa >= qb);
  }
}

TEST_CASE("adding a periodic pattern to background never raises q1") {
  synth::SceneSpec spec;
  std::vector<MeanVar> ref;
  for (const RgbImage& p : synth::RenderBackgroundPatches(spec, 4, 40, 3)) {
    ref.push_back(PatchMeanVar(p, p.width, p.height));
  }
  const GridCalibration cal = CalibrateGrid(ref);

  const auto patches = synth::RenderBackgroundPatches(spec, 4, 5, 8);
  std::vector<MeanVar> clean;
  for (const RgbImage& p : patches) clean.push_back(PatchMeanVar(p, p.width, p.height));
  const double base = ComputeQ1(clean, cal).q1;
  CHECK(base > 0.9);

  double previous = base;
  for (int amplitude : {2, 4, 8}) {
    std::vector<MeanVar> gridded;
    for (RgbImage p : patches) {
      for (int y = 0; y < p.height; ++y) {
        for (int x = 0; x < p.width; ++x) {
          const int delta = (x % 102 < 4 || y % 102 < 4) ? -amplitude : 0;
          for (int c = 0; c < 3; ++c) {
            p.px(x, y)[c] = static_cast<std::uint8_t>(std::clamp(p.px(x, y)[c] + delta, 0, 255));
          }
        }
      }
      gridded.push_back(PatchMeanVar(p, p.width, p.height));
    }
    const double q = ComputeQ1(gridded, cal).q1;
    CHECK(q <= previous);
    previous = q;
  }
  CHECK(previous < base);
}

TEST_CASE("background patch selection") {
  // 4 x 5 lattice, white fraction decreasing with index.
  std::vector<BackgroundCandidate> c;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) {
      const double f = 1.0 - 0.01 * (i * 5 + j);
      c.push_back({i, j, f, f > 0.8});
    }
  }
  const auto picked = SelectContentFreePatches(c, 4, 5);
  REQUIRE(picked.size() == 5);
  for (int k = 0; k < 5; ++k) {
    CHECK(picked[k].grid_i == 0);
    CHECK(picked[k].grid_j == k);
  }

  // Order of the input does not matter.
  std::mt19937_64 rng(2);
  for (int round = 0; round < 10; ++round) {
    std::shuffle(c.begin(), c.end(), rng);
    const auto again = SelectContentFreePatches(c, 4, 5);
    for (int k = 0; k < 5; ++k) {
      CHECK(again[k].grid_i == picked[k].grid_i);
      CHECK(again[k].grid_j == picked[k].grid_j);
    }
  }

  // Ties at the cut-off prefer corners, then the centre.
  std::vector<BackgroundCandidate> tie;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) tie.push_back({i, j, 0.95, true});
  }
  const auto spread = SelectContentFreePatches(tie, 5, 5);
  std::vector<std::pair<std::int64_t, std::int64_t>> got;
  for (const auto& p : spread) got.emplace_back(p.grid_i, p.grid_j);
  const std::vector<std::pair<std::int64_t, std::int64_t>> want{{0, 0}, {0, 4}, {2, 2}, {4, 0}, {4, 4}};
  CHECK(got == want);

  std::vector<BackgroundCandidate> few{{0, 0, 0.9, true}, {0, 1, 0.9, true}, {0, 2, 0.5, false}};
  CHECK_THROWS_CODE(SelectContentFreePatches(few, 1, 3), ErrorCode::kInsufficientBackground);
}
