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
#include <numbers>
#include <random>

#include "test_util.hpp"
#include "wsiqc/content_metrics.hpp"

using namespace wsiqc;
using namespace wsiqc::content;

namespace {

Detection Det(std::int64_t i, std::int64_t j, Box box, DetectionClass cls = DetectionClass::kSquamousCell,
              double conf = 0.9) {
  Detection d;
  d.magnification = 20;
  d.grid_i = i;
  d.grid_j = j;
  d.cls = cls;
  d.box = box;
  d.conf = conf;
  return d;
}

GrayImage Disk(int size, double cx, double cy, double r, std::uint8_t fg, std::uint8_t bg) {
  GrayImage g(size, size, bg);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) g.at(x, y) = fg;
    }
  }
  return g;
}

}  // namespace

TEST_CASE("q6 and q7") {
  CHECK(Q6FromCount(0) == 0.0);
  CHECK(Q6FromCount(1000) == 0.2);
  CHECK(Q6FromCount(12000) == 1.0);
  CHECK(Q7FromMassCount(0) == 1.0);
  CHECK(Q7FromMassCount(51) == doctest::Approx(50.0 / 51));
  CHECK(Q7FromMassCount(500) == 0.1);
  CHECK_THROWS_CODE(Q6FromCount(-1), ErrorCode::kInvalidArgument);
  CHECK_THROWS_CODE(Q7FromMassCount(-1), ErrorCode::kInvalidArgument);

  for (std::int64_t x = 0; x < 6000; x += 37) {
    REQUIRE(Q6FromCount(x + 37) >= Q6FromCount(x));
    REQUIRE(Q7FromMassCount(x + 37) <= Q7FromMassCount(x));
  }
}

TEST_CASE("q8 and the adequacy annotation") {
  const double s = 512.0 * 512.0 * 4;
  CHECK(Q8FromAreas(0, s).annotation == TbsAnnotation::kNone);
  CHECK(Q8FromAreas(0.49 * s, s).annotation == TbsAnnotation::kNone);
  CHECK(Q8FromAreas(0.5 * s, s).annotation == TbsAnnotation::kInflammatoryObscuration);
  CHECK(Q8FromAreas(0.75 * s, s).annotation == TbsAnnotation::kInflammatoryObscuration);
  CHECK(Q8FromAreas(0.76 * s, s).annotation == TbsAnnotation::kUnsatisfactory);
  CHECK(Q8FromAreas(0.25 * s, s).q8 == 0.75);
  CHECK(Q8FromAreas(s, s).q8 == 0.0);
  CHECK_THROWS_CODE(Q8FromAreas(1, 0), ErrorCode::kZeroContentArea);
  CHECK_THROWS_CODE(Q8FromAreas(2 * s, s), ErrorCode::kInvalidArgument);

  double prev = 2;
  for (double a = 0; a <= s; a += s / 97) {
    const double q = Q8FromAreas(a, s).q8;
    REQUIRE(q < prev);
    prev = q;
  }

  for (auto a : {TbsAnnotation::kNone, TbsAnnotation::kInflammatoryObscuration,
                 TbsAnnotation::kUnsatisfactory}) {
    CHECK(ParseTbsAnnotation(TbsAnnotationName(a)) == a);
  }
  CHECK_FALSE(ParseTbsAnnotation("adequate").has_value());
}

TEST_CASE("detection validation") {
  CHECK(DetectionProblem(Det(0, 0, {10, 10, 20, 20})).empty());
  CHECK_FALSE(DetectionProblem(Det(0, 0, {500, 10, 20, 20})).empty());
  CHECK_FALSE(DetectionProblem(Det(0, 0, {10, 10, 0, 20})).empty());
  CHECK_FALSE(DetectionProblem(Det(0, 0, {10, 10, 5, 5}, DetectionClass::kNeutrophil, 1.5)).empty());
  CHECK_FALSE(DetectionProblem(Det(-1, 0, {10, 10, 5, 5})).empty());
  CHECK(ParseDetectionClass(DetectionClassName(DetectionClass::kCellMass)) == DetectionClass::kCellMass);
  CHECK_THROWS_CODE(ParseDetectionClass("erythrocyte"), ErrorCode::kUnknownClass);
}

TEST_CASE("counting honours class and confidence floor") {
  std::vector<Detection> d{Det(0, 0, {10, 10, 20, 20}),
                           Det(0, 0, {50, 10, 20, 20}, DetectionClass::kSquamousCell, 0.5),
                           Det(0, 0, {90, 10, 20, 20}, DetectionClass::kSquamousCell, 0.49),
                           Det(0, 0, {130, 10, 20, 20}, DetectionClass::kNeutrophil)};
  CHECK(CountCells(d) == 2);
  CHECK(CountCells(d, 0.0) == 3);
  CHECK(CountObjects(d, DetectionClass::kNeutrophil) == 1);
  CHECK(CountObjects(d, DetectionClass::kCellMass) == 0);
}

TEST_CASE("border fragments merge once") {
  // A cell cut by the vertical edge between (0,0) and (0,1).
  std::vector<Detection> d{Det(0, 0, {500, 100, 12, 30}), Det(0, 1, {0, 102, 10, 30})};
  CHECK(CountCells(d) == 1);

  // Poor overlap along the edge: two objects.
  std::vector<Detection> apart{Det(0, 0, {500, 100, 12, 30}), Det(0, 1, {0, 200, 10, 30})};
  CHECK(CountCells(apart) == 2);

  // Too far from the edge to be a fragment.
  std::vector<Detection> wide{Det(0, 0, {440, 100, 72, 30}), Det(0, 1, {0, 100, 10, 30})};
  CHECK(CountCells(wide) == 2);

  // Not adjacent patches.
  std::vector<Detection> skip{Det(0, 0, {500, 100, 12, 30}), Det(0, 2, {0, 100, 10, 30})};
  CHECK(CountCells(skip) == 2);

  // A corner object split in four.
  std::vector<Detection> corner{Det(0, 0, {500, 500, 12, 12}), Det(0, 1, {0, 500, 8, 12}),
                                Det(1, 0, {500, 0, 12, 9}), Det(1, 1, {0, 0, 8, 9})};
  CHECK(CountCells(corner) == 1);

  // Different magnifications never merge.
  std::vector<Detection> mags = d;
  mags[1].magnification = 10;
  CHECK(CountCells(mags) == 2);
}

TEST_CASE("deduplication does not depend on input order") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> coord(0, 3), off(90, 130), len(8, 14), pick(0, 3);
  std::vector<Detection> d;
  for (int k = 0; k < 300; ++k) {
    const std::int64_t i = coord(rng), j = coord(rng);
    switch (pick(rng)) {
      case 0: d.push_back(Det(i, j, {512 - 12, off(rng), 12, len(rng) + 20})); break;
      case 1: d.push_back(Det(i, j, {0, off(rng), len(rng), len(rng) + 20})); break;
      case 2: d.push_back(Det(i, j, {off(rng), 512 - 10, len(rng) + 20, 10})); break;
      default: d.push_back(Det(i, j, {off(rng), 0, len(rng) + 20, len(rng)})); break;
    }
  }
  const std::int64_t n = CountCells(d);
  CHECK(n < 300);
  for (int round = 0; round < 20; ++round) {
    std::shuffle(d.begin(), d.end(), rng);
    REQUIRE(CountCells(d) == n);
  }
}

TEST_CASE("otsu") {
  std::array<std::int64_t, 256> h{};
  h[40] = 100;
  h[200] = 300;
  const OtsuResult r = Otsu(h);
  CHECK(r.threshold >= 40);
  CHECK(r.threshold < 200);
  CHECK(r.separability == doctest::Approx(1.0));
  CHECK(r.mean_gap == doctest::Approx(160));

  std::array<std::int64_t, 256> flat{};
  flat[128] = 1000;
  CHECK(Otsu(flat).separability == 0.0);
}

TEST_CASE("box area of a dark disk") {
  const GrayImage g = Disk(64, 32, 32, 10, 60, 210);
  const double area = static_cast<double>(BoxArea(g, {12, 12, 40, 40}));
  CHECK(std::abs(area - std::numbers::pi * 100) / (std::numbers::pi * 100) < 0.1);

  // A box with no contrast has no foreground.
  CHECK(BoxArea(GrayImage(64, 64, 200), {0, 0, 64, 64}) == 0);

  // Overlapping boxes are counted once.
  const std::vector<Box> twice{{12, 12, 40, 40}, {10, 10, 44, 44}};
  CHECK(PatchNeutrophilArea(g, twice) == static_cast<std::int64_t>(area));
  CHECK(PatchNeutrophilArea(g, {}) == 0);

  RgbImage rgb(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) rgb.px(x, y)[0] = rgb.px(x, y)[1] = rgb.px(x, y)[2] = g.at(x, y);
  }
  CHECK(BoxArea(rgb, {12, 12, 40, 40}) == static_cast<std::int64_t>(area));
}
