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
#include <fstream>
#include <set>
#include <utility>

#include "test_util.hpp"
#include "wsiqc/png_io.hpp"
#include "wsiqc/pyramid.hpp"

using namespace wsiqc;
using wsiqc::testing::NoiseImage;
using wsiqc::testing::TempDir;

TEST_CASE("rational arithmetic") {
  CHECK(Rational::Make(6, 4) == Rational{3, 2});
  CHECK(Rational::FromDouble(0.2) == Rational{1, 5});
  CHECK(Rational::FromDouble(0.5) == Rational{1, 2});
  CHECK(Rational::FromDouble(10.0 / 20.0) == Rational{1, 2});
  CHECK(Rational::FromDouble(4.0 / 20.0) == Rational{1, 5});
  CHECK(Rational::FromDouble(1.0 / 3.0) == Rational{1, 3});
  CHECK((Rational{1, 2} / Rational{1, 5}) == Rational{5, 2});
  CHECK(Rational{1, 3} < Rational{1, 2});
  CHECK(Rational{3, 7}.ScaleFloor(100) == 42);
  CHECK_THROWS_CODE(Rational::Make(0, 1), ErrorCode::kInvalidArgument);
  CHECK_THROWS_CODE(Rational::FromDouble(-1), ErrorCode::kInvalidArgument);
}

TEST_CASE("box resample averages exact footprints") {
  RgbImage src(4, 2);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 4; ++x) {
      for (int c = 0; c < 3; ++c) src.px(x, y)[c] = static_cast<std::uint8_t>(10 * (y * 4 + x));
    }
  }
  const RgbImage half = BoxResample(src, Rational{2, 1}, 2, 1);
  // (0 + 10 + 40 + 50) / 4 = 25, (20 + 30 + 60 + 70) / 4 = 45
  CHECK(half.px(0, 0)[0] == 25);
  CHECK(half.px(1, 0)[1] == 45);

  const RgbImage same = BoxResample(src, Rational{1, 1}, 4, 2);
  CHECK(same == src);
}

TEST_CASE("windowed resample matches the full resample") {
  const RgbImage src = NoiseImage(301, 257, 5);
  const Rational ratio{5, 2};
  const std::int64_t ow = ratio.den * 301 / ratio.num, oh = ratio.den * 257 / ratio.num;
  const RgbImage full = BoxResample(src, ratio, ow, oh);
  const RgbImage win = BoxResampleWindow(src, 0, 0, 301, 257, ratio, 17, 9, 40, 33);
  CHECK(win == Crop(full, 17, 9, 40, 33));
}

TEST_CASE("white classification uses a strict 80 percent rule on real pixels") {
  RgbImage img(10, 10, 255);
  // 80 of 100 bright: not white.
  for (int i = 0; i < 20; ++i) img.px(i % 10, i / 10)[1] = 100;
  CHECK_FALSE(CountWhite(img, 10, 10).is_white());
  img.px(0, 1)[1] = 255;  // 81 bright
  CHECK(CountWhite(img, 10, 10).is_white());

  // One channel at 200 is not bright.
  RgbImage edge(2, 1, 201);
  edge.px(0, 0)[2] = 200;
  CHECK(CountWhite(edge, 2, 1).white == 1);

  // Padding is ignored.
  RgbImage padded(512, 512, 0);
  for (int y = 0; y < 100; ++y) {
    for (int x = 0; x < 100; ++x) padded.px(x, y)[0] = padded.px(x, y)[1] = padded.px(x, y)[2] = 250;
  }
  CHECK(WhiteFraction(padded, 100, 100) == doctest::Approx(1.0));
  CHECK(CountWhite(padded, 100, 100).total == 10000);
}

TEST_CASE("memory slide patches cover every pixel once") {
  const RgbImage base = NoiseImage(1300, 700, 9);
  const SlideHandle slide = MakeMemorySlide("m", 20, {Rational{1, 1}}, {base});
  const PatchGrid grid = slide->Patches(20);
  CHECK(grid.rows() == 2);
  CHECK(grid.cols() == 3);

  std::vector<int> seen(static_cast<std::size_t>(base.width) * base.height, 0);
  std::set<std::pair<std::int64_t, std::int64_t>> cells;
  IterPatches(*slide, 20, [&](const PatchRecord& p) {
    CHECK(p.pixels.width == kPatchSize);
    CHECK(p.pixels.height == kPatchSize);
    cells.insert({p.grid_i, p.grid_j});
    for (int y = 0; y < p.valid_height; ++y) {
      for (int x = 0; x < p.valid_width; ++x) {
        const int gx = static_cast<int>(p.grid_j) * kPatchSize + x;
        const int gy = static_cast<int>(p.grid_i) * kPatchSize + y;
        ++seen[static_cast<std::size_t>(gy) * base.width + gx];
        REQUIRE(p.pixels.px(x, y)[0] == base.px(gx, gy)[0]);
      }
    }
    // Padding is zero.
    if (p.valid_width < kPatchSize) CHECK(p.pixels.px(kPatchSize - 1, 0)[0] == 0);
  });
  CHECK(cells.size() == 6);
  CHECK(std::all_of(seen.begin(), seen.end(), [](int n) { return n == 1; }));

  const PatchRecord corner = grid.Read(1, 2);
  CHECK(corner.valid_width == 1300 - 1024);
  CHECK(corner.valid_height == 700 - 512);
  CHECK(corner.padded_fraction == doctest::Approx(1.0 - 276.0 * 188.0 / (512.0 * 512.0)));
  CHECK(grid.Read(1, 2).pixels == corner.pixels);  // pure reads
}

TEST_CASE("downsample then tile equals tiling the downsampled raster") {
  const RgbImage base = NoiseImage(2000, 1100, 4);
  const std::vector<Rational> factors{{1, 1}, {1, 2}};
  const std::vector<RgbImage> levels = BuildLevels(base, factors);
  const SlideHandle slide = MakeMemorySlide("d", 20, factors, levels);
  // 4x is read from the half-resolution level, not from the base.
  const RgbImage at4 = BoxResample(levels[1], Rational{5, 2}, 400, 220);
  const PatchGrid grid = slide->Patches(4);
  CHECK(grid.source_level() == 1);
  CHECK(grid.width() == 400);
  CHECK(grid.ReadAll() == at4);

  // 10x comes from level 1 exactly.
  const PatchGrid g10 = slide->Patches(10);
  CHECK(g10.ReadAll() == BoxResample(base, Rational{2, 1}, 1000, 550));
}

TEST_CASE("magnification above base power is rejected") {
  const SlideHandle slide = MakeMemorySlide("x", 20, {Rational{1, 1}}, {RgbImage(600, 600, 230)});
  CHECK_THROWS_CODE(slide->Patches(40), ErrorCode::kMagnificationUnavailable);
  CHECK_NOTHROW(slide->Patches(20));
}

TEST_CASE("inconsistent level tables are corrupt") {
  CHECK_THROWS_CODE(MakeMemorySlide("x", 20, {Rational{1, 2}}, {RgbImage(10, 10)}),
                    ErrorCode::kCorruptPyramid);
  CHECK_THROWS_CODE(MakeMemorySlide("x", 20, {Rational{1, 1}, Rational{1, 2}},
                                    {RgbImage(10, 10), RgbImage(9, 5)}),
                    ErrorCode::kCorruptPyramid);
}

TEST_CASE("tile tree and tiff round trips") {
  TempDir tmp("pyramid");
  const RgbImage base = NoiseImage(1100, 900, 12);
  const std::vector<Rational> factors{{1, 1}, {1, 2}, {1, 5}};
  const std::vector<RgbImage> levels = BuildLevels(base, factors);

  WriteTileTree(tmp / "tree", 20, factors, levels, "named");
  const SlideHandle tree = OpenSlide(tmp / "tree");
  CHECK(tree->id() == "named");
  CHECK(tree->levels().size() == 3);
  CHECK(tree->levels()[2].factor == Rational{1, 5});
  CHECK(tree->Patches(20).ReadAll() == base);
  CHECK(tree->Patches(4).ReadAll() == levels[2]);

  WriteTiffPyramid(tmp / "slide.tif", 20, factors, levels);
  const SlideHandle tiff = OpenSlide(tmp / "slide.tif");
  CHECK(tiff->base_magnification() == 20);
  CHECK(tiff->levels().size() == 3);
  CHECK(tiff->Patches(20).ReadAll() == base);
  CHECK(tiff->Patches(10).ReadAll() == levels[1]);
  CHECK(tiff->Patches(4).Read(0, 0).pixels == tree->Patches(4).Read(0, 0).pixels);
}

TEST_CASE("opening bad inputs") {
  TempDir tmp("pyramid_bad");
  CHECK_THROWS_CODE(OpenSlide(tmp / "missing"), ErrorCode::kIo);

  std::filesystem::create_directories(tmp / "junk");
  {
    std::ofstream(tmp / "junk" / "manifest.json") << "{not json";
  }
  CHECK_THROWS_CODE(OpenSlide(tmp / "junk"), ErrorCode::kCorruptPyramid);

  {
    std::ofstream(tmp / "notes.txt") << "hello";
  }
  CHECK_THROWS(OpenSlide(tmp / "notes.txt"));
}

TEST_CASE("magnification labels") {
  CHECK(MagnificationLabel(4) == "4");
  CHECK(MagnificationLabel(20) == "20");
  CHECK(MagnificationLabel(2.5) == "2.5");
}
