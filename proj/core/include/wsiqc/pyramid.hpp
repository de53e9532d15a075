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

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "wsiqc/image.hpp"

namespace wsiqc {

/// Exact positive fraction used for level scale factors, so that level sizes
/// and resampling footprints never depend on floating-point rounding.
struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;

  static Rational Make(std::int64_t num, std::int64_t den);
  /// Best approximation with denominator <= max_den (continued fractions).
  static Rational FromDouble(double value, std::int64_t max_den = 10000);

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  /// floor(v * this)
  std::int64_t ScaleFloor(std::int64_t v) const { return v * num / den; }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num == b.num && a.den == b.den;
  }
  friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
    return a.num * b.den <=> b.num * a.den;
  }
};

Rational operator/(const Rational& a, const Rational& b);

struct PyramidLevel {
  Rational factor;  // relative to the base level; level 0 is 1/1
  std::int64_t width = 0;
  std::int64_t height = 0;
};

/// Backing store for pyramid pixels. Implementations must be safe to call
/// from several threads at once.
class TileSource {
 public:
  virtual ~TileSource() = default;
  virtual int tile_size() const = 0;
  /// Tile (row, col) of `level`. Border tiles are cropped to the level extent.
  virtual RgbImage ReadTile(int level, std::int64_t row, std::int64_t col) const = 0;
};

/// Content/background classification of one patch. Padding is not counted.
struct WhiteStats {
  std::int64_t white = 0;  // pixels with min(R,G,B) > 200
  std::int64_t total = 0;  // non-padding pixels

  double fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(white) / static_cast<double>(total);
  }
  /// Strictly more than 80% of the real pixels are bright.
  bool is_white() const { return white * 5 > total * 4; }
};

inline constexpr std::uint8_t kWhiteLevel = 200;

WhiteStats CountWhite(const RgbImage& pixels, int valid_width, int valid_height);

/// Fraction of non-padding pixels whose three channels all exceed 200.
double WhiteFraction(const RgbImage& pixels, int valid_width, int valid_height);
inline double WhiteFraction(const RgbImage& pixels) {
  return WhiteFraction(pixels, pixels.width, pixels.height);
}

struct PatchRecord {
  double magnification = 0;  // objective power of the pass, e.g. 4 or 20
  std::int64_t grid_i = 0;   // row
  std::int64_t grid_j = 0;   // column
  RgbImage pixels;           // always kPatchSize x kPatchSize, zero padded
  int valid_width = 0;
  int valid_height = 0;
  double white_fraction = 0;
  bool is_white = false;
  double padded_fraction = 0;
};

class SlidePyramid;

/// Non-overlapping 512x512 patch lattice over one magnification of a slide.
/// Cheap to copy; reads are pure and thread-safe.
class PatchGrid {
 public:
  double magnification() const { return magnification_; }
  std::int64_t width() const { return width_; }
  std::int64_t height() const { return height_; }
  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::size_t size() const { return static_cast<std::size_t>(rows_ * cols_); }
  int source_level() const { return source_level_; }

  PatchRecord Read(std::int64_t i, std::int64_t j) const;
  /// Row-major linear index.
  PatchRecord Read(std::size_t index) const {
    return Read(static_cast<std::int64_t>(index) / cols_,
                static_cast<std::int64_t>(index) % cols_);
  }

  /// The whole raster at this magnification; only sensible for small slides
  /// and thumbnails.
  RgbImage ReadAll() const;

 private:
  friend class SlidePyramid;
  PatchGrid() = default;

  RgbImage ReadWindow(std::int64_t x, std::int64_t y, int w, int h) const;

  std::shared_ptr<const SlidePyramid> slide_;
  double magnification_ = 0;
  int source_level_ = 0;
  Rational ratio_;  // source pixels per output pixel, >= 1
  std::int64_t width_ = 0;
  std::int64_t height_ = 0;
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
};

class SlidePyramid : public std::enable_shared_from_this<SlidePyramid> {
 public:
  /// Validates the level table and throws CorruptPyramid on inconsistency.
  SlidePyramid(std::string id, double base_magnification,
               std::vector<PyramidLevel> levels,
               std::shared_ptr<const TileSource> source);

  const std::string& id() const { return id_; }
  double base_magnification() const { return base_magnification_; }
  const std::vector<PyramidLevel>& levels() const { return levels_; }
  std::int64_t base_width() const { return levels_.front().width; }
  std::int64_t base_height() const { return levels_.front().height; }
  const TileSource& source() const { return *source_; }

  /// Pixels of `level` in [x, x+w) x [y, y+h); outside the level is 0.
  RgbImage ReadRegion(int level, std::int64_t x, std::int64_t y, int w, int h) const;

  /// Patch lattice at the requested objective power. Uses the smallest level
  /// whose factor is at least the requested one and area-averages down to the
  /// exact magnification. Throws MagnificationUnavailable above base power.
  PatchGrid Patches(double magnification) const;

 private:
  std::string id_;
  double base_magnification_;
  std::vector<PyramidLevel> levels_;
  std::shared_ptr<const TileSource> source_;
};

using SlideHandle = std::shared_ptr<const SlidePyramid>;

/// Opens a tile-tree directory (manifest.json) or a tiled multi-page TIFF.
/// No pixel data is decoded.
SlideHandle OpenSlide(const std::filesystem::path& path);

/// Wraps in-memory rasters, level 0 first.
SlideHandle MakeMemorySlide(std::string id, double base_magnification,
                            std::vector<Rational> factors,
                            std::vector<RgbImage> rasters);

/// Calls fn for each patch in row-major order.
void IterPatches(const SlidePyramid& slide, double magnification,
                 const std::function<void(const PatchRecord&)>& fn);

/// Area-average resampling by `ratio` (source pixels per output pixel, >= 1).
/// Output pixel x covers source interval [x*ratio, (x+1)*ratio); footprints
/// are clipped to the source and weights are exact integers, so the result is
/// independent of how the raster is tiled.
RgbImage BoxResample(const RgbImage& src, Rational ratio, std::int64_t out_width,
                     std::int64_t out_height);

/// Resamples only the output window [ox, ox+w) x [oy, oy+h). `chunk` holds
/// source pixels starting at (chunk_x, chunk_y) of a source raster with the
/// given full dimensions and must cover the window's footprint.
RgbImage BoxResampleWindow(const RgbImage& chunk, std::int64_t chunk_x,
                           std::int64_t chunk_y, std::int64_t src_width,
                           std::int64_t src_height, Rational ratio,
                           std::int64_t ox, std::int64_t oy, int w, int h);

// Writers. Tile trees are the fixture format; TIFF is the exchange format.
/// An empty slide_id makes readers fall back to the directory name.
void WriteTileTree(const std::filesystem::path& dir, double base_magnification,
                   const std::vector<Rational>& factors,
                   const std::vector<RgbImage>& rasters, const std::string& slide_id = {});
void WriteTiffPyramid(const std::filesystem::path& path, double base_magnification,
                      const std::vector<Rational>& factors,
                      const std::vector<RgbImage>& rasters);

/// Builds the level rasters for `factors` from a base raster using
/// BoxResample from the base.
std::vector<RgbImage> BuildLevels(const RgbImage& base,
                                  const std::vector<Rational>& factors);

/// "4", "20", "2.5": the magnification spelling used in artifact filenames.
std::string MagnificationLabel(double magnification);

}  // namespace wsiqc
