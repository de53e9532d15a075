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
#include <random>

#include "test_util.hpp"
#include "wsiqc/stain_metric.hpp"

using namespace wsiqc;
using namespace wsiqc::stain;

TEST_CASE("default basis is normalised and non-negative") {
  const StainBasis b = StainBasis::Default();
  for (const Vec3* v : {&b.hematoxylin, &b.eosin}) {
    CHECK(std::hypot((*v)[0], (*v)[1], (*v)[2]) == doctest::Approx(1.0));
    for (double c : *v) CHECK(c >= 0);
  }
  StainBasis bad;
  bad.eosin = bad.hematoxylin;
  CHECK_THROWS_CODE(bad.Normalize(), ErrorCode::kInvalidArgument);
  bad.eosin = {-0.1, 1, 0};
  CHECK_THROWS_CODE(bad.Normalize(), ErrorCode::kInvalidArgument);
}

TEST_CASE("quantised pixels re-synthesise within one gray level") {
  const StainBasis basis = StainBasis::Default();
  const Deconvolver dec(basis);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> conc(0, 1.2);
  for (int i = 0; i < 2000; ++i) {
    const Concentrations c{conc(rng), conc(rng)};
    const Vec3 exact = RenderIntensity(basis, c);
    std::uint8_t q[3];
    for (int k = 0; k < 3; ++k) q[k] = static_cast<std::uint8_t>(std::lround(exact[k]));
    // Below about 10 gray levels the rounding error in one channel's optical
    // density is large enough to leak into the others through the fit.
    if (std::min({q[0], q[1], q[2]}) < 10) continue;
    const Vec3 again = RenderIntensity(basis, dec.Pixel(q[0], q[1], q[2]));
    for (int k = 0; k < 3; ++k) REQUIRE(std::abs(again[k] - exact[k]) <= 1.0);
  }
  // Blank glass has no stain.
  const Concentrations blank = dec.Pixel(255, 255, 255);
  CHECK(blank.hematoxylin == 0);
  CHECK(blank.eosin == 0);
}

TEST_CASE("channel score shape") {
  const GrayRange r{180, 200};
  CHECK(ScoreChannel(180, r) == 1.0);
  CHECK(ScoreChannel(200, r) == 1.0);
  CHECK(ScoreChannel(300, r) == doctest::Approx(0.5));
  CHECK(ScoreChannel(400, r) == 0.0);
  CHECK(ScoreChannel(500, r) == 0.0);
  CHECK(ScoreChannel(90, r) == doctest::Approx(0.5));
  CHECK(ScoreChannel(0, r) == 0.0);

  // Continuous and non-increasing away from the range.
  double prev = 1;
  for (double v = 200; v <= 420; v += 0.5) {
    const double s = ScoreChannel(v, r);
    REQUIRE(s <= prev);
    REQUIRE(std::abs(s - prev) < 0.01);
    prev = s;
  }
  prev = 1;
  for (double v = 180; v >= 0; v -= 0.5) {
    const double s = ScoreChannel(v, r);
    REQUIRE(s <= prev);
    prev = s;
  }
}

TEST_CASE("q5 is the minimum of the evaluable channels") {
  const StainCalibration cal;
  PatchStain t;
  t.hematoxylin = {190.0 * 4, 4};
  t.eosin = {285.0 * 2, 2};  // score 1 - 95/190 = 0.5
  StainMeasurement m = ScoreStain(t, cal);
  CHECK(m.score_hematoxylin == 1.0);
  CHECK(*m.score_eosin == doctest::Approx(0.5));
  CHECK(*m.q5 == doctest::Approx(0.5));
  CHECK(m.count_eosin == 2);

  t.eosin = {};
  m = ScoreStain(t, cal);
  CHECK_FALSE(m.v_gray_eosin.has_value());
  CHECK(m.q5 == 1.0);

  m = ScoreStain(PatchStain{}, cal);
  CHECK_FALSE(m.q5.has_value());
}

TEST_CASE("masked gray means") {
  RgbImage img(4, 1, 0);
  const std::uint8_t g[4] = {100, 150, 200, 250};
  for (int x = 0; x < 4; ++x) img.px(x, 0)[0] = img.px(x, 0)[1] = img.px(x, 0)[2] = g[x];
  const std::vector<double> c{0.5, 0.1, 0.2, 0.15};
  const GraySum s = ChannelGray(img, c, 0.15, 4, 1);
  CHECK(s.count == 2);  // strictly above tau
  CHECK(*s.mean() == doctest::Approx(150));
  CHECK(ChannelGray(img, c, 0.15, 1, 1).count == 1);
  CHECK_FALSE(GraySum{}.mean().has_value());

  GraySum a{10, 1};
  a += GraySum{30, 3};
  CHECK(*a.mean() == 10);
}

TEST_CASE("measure patch separates planted stains") {
  const StainBasis basis = StainBasis::Default();
  const Deconvolver dec(basis);
  RgbImage patch(kPatchSize, kPatchSize, 0);
  for (int y = 0; y < kPatchSize; ++y) {
    for (int x = 0; x < kPatchSize; ++x) {
      Concentrations c;
      if (x < 100) c.hematoxylin = 0.6;
      else if (x < 300) c.eosin = 0.5;
      const Vec3 v = RenderIntensity(basis, c);
      for (int k = 0; k < 3; ++k) patch.px(x, y)[k] = static_cast<std::uint8_t>(std::lround(v[k]));
    }
  }
  const PatchStain s = MeasurePatch(patch, dec, kDefaultTau);
  CHECK(s.hematoxylin.count == 100 * kPatchSize);
  CHECK(s.eosin.count == 200 * kPatchSize);
  const Vec3 h = RenderIntensity(basis, {0.6, 0});
  const double gray_h = Bt601Gray(static_cast<std::uint8_t>(std::lround(h[0])),
                                  static_cast<std::uint8_t>(std::lround(h[1])),
                                  static_cast<std::uint8_t>(std::lround(h[2])));
  CHECK(*s.hematoxylin.mean() == doctest::Approx(gray_h));
}

TEST_CASE("adaptive basis falls back on blank input") {
  std::vector<RgbImage> blank{RgbImage(64, 64, 250)};
  const BasisEstimate e = EstimateBasis(blank);
  CHECK(e.adaptive_failed);
  CHECK(e.basis == StainBasis::Default());
}

TEST_CASE("calibration from reference slides") {
  std::vector<ReferenceGray> refs;
  for (int i = 0; i < 20; ++i) refs.push_back({150.0 + (i % 2 ? 5 : -5), 170.0});
  const StainCalibration cal = CalibrateStain(refs);
  CHECK(cal.sample_count == 20);
  // sd of +-5 over 20 samples (n - 1 denominator): sqrt(500 / 19)
  const double sd = std::sqrt(500.0 / 19.0);
  CHECK(cal.hematoxylin.min == doctest::Approx(150 - 2 * sd));
  CHECK(cal.hematoxylin.max == doctest::Approx(150 + 2 * sd));
  CHECK(cal.eosin.min == doctest::Approx(170));

  const StainCalibration back = ParseCalibration(SerializeCalibration(cal));
  CHECK(back.hematoxylin.min == doctest::Approx(cal.hematoxylin.min).epsilon(1e-15));
  CHECK(back.eosin == cal.eosin);
  CHECK(back.tau == cal.tau);

  refs.pop_back();
  CHECK_THROWS_CODE(CalibrateStain(refs), ErrorCode::kTooFewSamples);
  CHECK_THROWS_CODE(ParseCalibration(R"({"hematoxylin": {"min": 0, "max": 10}})"),
                    ErrorCode::kMalformedModel);
  CHECK_THROWS_CODE(ParseCalibration(R"({"hematoxylin": {"min": 100, "max": 110}, "eosin": {"min": 120, "max": 110}})"),
                    ErrorCode::kMalformedModel);
}
