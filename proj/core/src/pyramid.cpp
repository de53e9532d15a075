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

#include "wsiqc/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "tiff_source.hpp"
#include "wsiqc/error.hpp"
#include "wsiqc/png_io.hpp"

namespace wsiqc {

namespace fs = std::filesystem;
using json = nlohmann::json;

Rational Rational::Make(std::int64_t num, std::int64_t den) {
  if (num <= 0 || den <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "rational must be positive");
  }
  const std::int64_t g = std::gcd(num, den);
  return {num / g, den / g};
}

Rational Rational::FromDouble(double value, std::int64_t max_den) {
  if (!(value > 0) || !std::isfinite(value)) {
    throw Error(ErrorCode::kInvalidArgument, "scale factor must be positive");
  }
  // Continued-fraction convergents.
  std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double x = value;
  for (int iter = 0; iter < 64; ++iter) {
    const double a_f = std::floor(x);
    const auto a = static_cast<std::int64_t>(a_f);
    const std::int64_t p2 = a * p1 + p0;
    const std::int64_t q2 = a * q1 + q0;
    if (q2 > max_den) break;
    p0 = p1; q0 = q1; p1 = p2; q1 = q2;
    const double frac = x - a_f;
    if (frac < 1e-12 ||
        std::abs(static_cast<double>(p1) / static_cast<double>(q1) - value) <
            1e-12 * value) {
      break;
    }
    x = 1.0 / frac;
  }
  if (p1 <= 0 || q1 <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "cannot represent scale factor");
  }
  return Make(p1, q1);
}

Rational operator/(const Rational& a, const Rational& b) {
  return Rational::Make(a.num * b.den, a.den * b.num);
}

std::string MagnificationLabel(double magnification) {
  std::ostringstream os;
  os << magnification;
  return os.str();
}

WhiteStats CountWhite(const RgbImage& pixels, int valid_width, int valid_height) {
  WhiteStats s;
  valid_width = std::min(valid_width, pixels.width);
  valid_height = std::min(valid_height, pixels.height);
  for (int y = 0; y < valid_height; ++y) {
    const std::uint8_t* p = pixels.px(0, y);
    for (int x = 0; x < valid_width; ++x, p += 3) {
      if (p[0] > kWhiteLevel && p[1] > kWhiteLevel && p[2] > kWhiteLevel) ++s.white;
    }
  }
  s.total = static_cast<std::int64_t>(valid_width) * valid_height;
  return s;
}

double WhiteFraction(const RgbImage& pixels, int valid_width, int valid_height) {
  return CountWhite(pixels, valid_width, valid_height).fraction();
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

struct AxisTap {
  std::int64_t first = 0;              // first source index
  std::vector<std::int64_t> weights;   // in units of 1/den
};

// Footprint of output index o along one axis: [o*p, (o+1)*p) in units of 1/q.
AxisTap Footprint(std::int64_t o, Rational ratio, std::int64_t src_extent) {
  const std::int64_t p = ratio.num, q = ratio.den;
  const std::int64_t lo = o * p, hi = (o + 1) * p;
  std::int64_t s0 = lo / q;
  std::int64_t s1 = (hi + q - 1) / q;  // exclusive
  s0 = std::max<std::int64_t>(s0, 0);
  s1 = std::min(s1, src_extent);
  AxisTap tap;
  tap.first = s0;
  for (std::int64_t s = s0; s < s1; ++s) {
    const std::int64_t w = std::min(hi, (s + 1) * q) - std::max(lo, s * q);
    tap.weights.push_back(std::max<std::int64_t>(w, 0));
  }
  return tap;
}

}  // namespace

RgbImage BoxResampleWindow(const RgbImage& chunk, std::int64_t chunk_x,
                           std::int64_t chunk_y, std::int64_t src_width,
                           std::int64_t src_height, Rational ratio,
                           std::int64_t ox, std::int64_t oy, int w, int h) {
  if (ratio < Rational{1, 1}) {
    throw Error(ErrorCode::kInvalidArgument, "upsampling is not supported");
  }
  RgbImage out(w, h, 0);
  std::vector<AxisTap> xtaps(static_cast<std::size_t>(w));
  for (int x = 0; x < w; ++x) xtaps[x] = Footprint(ox + x, ratio, src_width);

  for (int y = 0; y < h; ++y) {
    const AxisTap ytap = Footprint(oy + y, ratio, src_height);
    for (int x = 0; x < w; ++x) {
      const AxisTap& xtap = xtaps[x];
      std::int64_t acc[3] = {0, 0, 0};
      std::int64_t total = 0;
      for (std::size_t a = 0; a < ytap.weights.size(); ++a) {
        const std::int64_t sy = ytap.first + static_cast<std::int64_t>(a) - chunk_y;
        const std::int64_t wy = ytap.weights[a];
        if (wy == 0) continue;
        for (std::size_t b = 0; b < xtap.weights.size(); ++b) {
          const std::int64_t sx = xtap.first + static_cast<std::int64_t>(b) - chunk_x;
          const std::int64_t wgt = wy * xtap.weights[b];
          if (wgt == 0) continue;
          const std::uint8_t* p = chunk.px(static_cast<int>(sx), static_cast<int>(sy));
          acc[0] += wgt * p[0];
          acc[1] += wgt * p[1];
          acc[2] += wgt * p[2];
          total += wgt;
        }
      }
      if (total == 0) continue;
      std::uint8_t* o = out.px(x, y);
      for (int c = 0; c < 3; ++c) {
        o[c] = static_cast<std::uint8_t>((2 * acc[c] + total) / (2 * total));
      }
    }
  }
  return out;
}

RgbImage BoxResample(const RgbImage& src, Rational ratio, std::int64_t out_width,
                     std::int64_t out_height) {
  return BoxResampleWindow(src, 0, 0, src.width, src.height, ratio, 0, 0,
                           static_cast<int>(out_width), static_cast<int>(out_height));
}

std::vector<RgbImage> BuildLevels(const RgbImage& base,
                                  const std::vector<Rational>& factors) {
  std::vector<RgbImage> out;
  out.reserve(factors.size());
  for (const Rational& f : factors) {
    if (f == Rational{1, 1}) {
      out.push_back(base);
      continue;
    }
    const Rational ratio = Rational{1, 1} / f;
    out.push_back(BoxResample(base, ratio, f.ScaleFloor(base.width),
                              f.ScaleFloor(base.height)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SlidePyramid

SlidePyramid::SlidePyramid(std::string id, double base_magnification,
                           std::vector<PyramidLevel> levels,
                           std::shared_ptr<const TileSource> source)
    : id_(std::move(id)),
      base_magnification_(base_magnification),
      levels_(std::move(levels)),
      source_(std::move(source)) {
  if (levels_.empty()) throw Error(ErrorCode::kCorruptPyramid, "no levels");
  if (!(base_magnification_ > 0)) {
    throw Error(ErrorCode::kCorruptPyramid, "base magnification must be positive");
  }
  if (!(levels_.front().factor == Rational{1, 1})) {
    throw Error(ErrorCode::kCorruptPyramid, "level 0 must have factor 1");
  }
  const std::int64_t bw = levels_.front().width, bh = levels_.front().height;
  if (bw <= 0 || bh <= 0) throw Error(ErrorCode::kCorruptPyramid, "empty base level");
  for (std::size_t k = 0; k < levels_.size(); ++k) {
    const PyramidLevel& lv = levels_[k];
    if (k > 0 && !(lv.factor < levels_[k - 1].factor)) {
      throw Error(ErrorCode::kCorruptPyramid,
                  "levels must strictly decrease in resolution");
    }
    if (lv.width != lv.factor.ScaleFloor(bw) || lv.height != lv.factor.ScaleFloor(bh)) {
      throw Error(ErrorCode::kCorruptPyramid,
                  "level " + std::to_string(k) + " dimensions do not match its factor");
    }
  }
}

RgbImage SlidePyramid::ReadRegion(int level, std::int64_t x, std::int64_t y, int w,
                                  int h) const {
  const PyramidLevel& lv = levels_.at(static_cast<std::size_t>(level));
  const int ts = source_->tile_size();
  RgbImage out(w, h, 0);
  const std::int64_t x0 = std::max<std::int64_t>(x, 0);
  const std::int64_t y0 = std::max<std::int64_t>(y, 0);
  const std::int64_t x1 = std::min<std::int64_t>(x + w, lv.width);
  const std::int64_t y1 = std::min<std::int64_t>(y + h, lv.height);
  if (x1 <= x0 || y1 <= y0) return out;
  for (std::int64_t tr = y0 / ts; tr <= (y1 - 1) / ts; ++tr) {
    for (std::int64_t tc = x0 / ts; tc <= (x1 - 1) / ts; ++tc) {
      const RgbImage tile = source_->ReadTile(level, tr, tc);
      const std::int64_t tx = tc * ts, ty = tr * ts;
      const std::int64_t cx0 = std::max(x0, tx), cx1 = std::min(x1, tx + tile.width);
      const std::int64_t cy0 = std::max(y0, ty), cy1 = std::min(y1, ty + tile.height);
      for (std::int64_t yy = cy0; yy < cy1; ++yy) {
        std::memcpy(out.px(static_cast<int>(cx0 - x), static_cast<int>(yy - y)),
                    tile.px(static_cast<int>(cx0 - tx), static_cast<int>(yy - ty)),
                    static_cast<std::size_t>(cx1 - cx0) * 3);
      }
    }
  }
  return out;
}

PatchGrid SlidePyramid::Patches(double magnification) const {
  if (!(magnification > 0) || !std::isfinite(magnification)) {
    throw Error(ErrorCode::kInvalidArgument, "magnification must be positive");
  }
  if (magnification > base_magnification_ * (1 + 1e-9)) {
    throw Error(ErrorCode::kMagnificationUnavailable,
                "requested " + MagnificationLabel(magnification) + "x exceeds base " +
                    MagnificationLabel(base_magnification_) + "x");
  }
  const Rational target = magnification >= base_magnification_
                              ? Rational{1, 1}
                              : Rational::FromDouble(magnification / base_magnification_);
  int chosen = 0;
  for (std::size_t k = 0; k < levels_.size(); ++k) {
    if (levels_[k].factor >= target) chosen = static_cast<int>(k);
  }
  PatchGrid grid;
  grid.slide_ = shared_from_this();
  grid.magnification_ = magnification;
  grid.source_level_ = chosen;
  grid.ratio_ = levels_[chosen].factor / target;
  grid.width_ = target.ScaleFloor(base_width());
  grid.height_ = target.ScaleFloor(base_height());
  if (grid.width_ <= 0 || grid.height_ <= 0) {
    throw Error(ErrorCode::kMagnificationUnavailable, "slide vanishes at this magnification");
  }
  grid.rows_ = (grid.height_ + kPatchSize - 1) / kPatchSize;
  grid.cols_ = (grid.width_ + kPatchSize - 1) / kPatchSize;
  return grid;
}

// ---------------------------------------------------------------------------
// PatchGrid

RgbImage PatchGrid::ReadWindow(std::int64_t x, std::int64_t y, int w, int h) const {
  if (ratio_ == Rational{1, 1}) return slide_->ReadRegion(source_level_, x, y, w, h);
  const PyramidLevel& src = slide_->levels()[static_cast<std::size_t>(source_level_)];
  const std::int64_t p = ratio_.num, q = ratio_.den;
  const std::int64_t sx0 = x * p / q, sy0 = y * p / q;
  const std::int64_t sx1 = ((x + w) * p + q - 1) / q;
  const std::int64_t sy1 = ((y + h) * p + q - 1) / q;
  const RgbImage chunk = slide_->ReadRegion(source_level_, sx0, sy0,
                                            static_cast<int>(sx1 - sx0),
                                            static_cast<int>(sy1 - sy0));
  return BoxResampleWindow(chunk, sx0, sy0, src.width, src.height, ratio_, x, y, w, h);
}

PatchRecord PatchGrid::Read(std::int64_t i, std::int64_t j) const {
  if (i < 0 || j < 0 || i >= rows_ || j >= cols_) {
    throw Error(ErrorCode::kInvalidArgument, "patch index out of range");
  }
  PatchRecord rec;
  rec.magnification = magnification_;
  rec.grid_i = i;
  rec.grid_j = j;
  const std::int64_t x = j * kPatchSize, y = i * kPatchSize;
  rec.valid_width = static_cast<int>(std::min<std::int64_t>(kPatchSize, width_ - x));
  rec.valid_height = static_cast<int>(std::min<std::int64_t>(kPatchSize, height_ - y));
  RgbImage valid = ReadWindow(x, y, rec.valid_width, rec.valid_height);
  if (rec.valid_width == kPatchSize && rec.valid_height == kPatchSize) {
    rec.pixels = std::move(valid);
  } else {
    rec.pixels = Crop(valid, 0, 0, kPatchSize, kPatchSize);
  }
  const WhiteStats ws = CountWhite(rec.pixels, rec.valid_width, rec.valid_height);
  rec.white_fraction = ws.fraction();
  rec.is_white = ws.is_white();
  rec.padded_fraction =
      1.0 - static_cast<double>(ws.total) / (static_cast<double>(kPatchSize) * kPatchSize);
  return rec;
}

RgbImage PatchGrid::ReadAll() const {
  return ReadWindow(0, 0, static_cast<int>(width_), static_cast<int>(height_));
}

void IterPatches(const SlidePyramid& slide, double magnification,
                 const std::function<void(const PatchRecord&)>& fn) {
  const PatchGrid grid = slide.Patches(magnification);
  for (std::size_t k = 0; k < grid.size(); ++k) fn(grid.Read(k));
}

// ---------------------------------------------------------------------------
// Tile sources

namespace {

class MemoryTileSource final : public TileSource {
 public:
  explicit MemoryTileSource(std::vector<RgbImage> rasters) : rasters_(std::move(rasters)) {}
  int tile_size() const override { return kPatchSize; }
  RgbImage ReadTile(int level, std::int64_t row, std::int64_t col) const override {
    const RgbImage& r = rasters_.at(static_cast<std::size_t>(level));
    const int x = static_cast<int>(col * kPatchSize), y = static_cast<int>(row * kPatchSize);
    return Crop(r, x, y, std::min(kPatchSize, r.width - x), std::min(kPatchSize, r.height - y));
  }

 private:
  std::vector<RgbImage> rasters_;
};

class TileTreeSource final : public TileSource {
 public:
  TileTreeSource(fs::path root, std::vector<PyramidLevel> levels, int tile_size)
      : root_(std::move(root)), levels_(std::move(levels)), tile_size_(tile_size) {}

  int tile_size() const override { return tile_size_; }

  fs::path TilePath(int level, std::int64_t row, std::int64_t col) const {
    return root_ / ("level_" + std::to_string(level)) /
           (std::to_string(row) + "_" + std::to_string(col) + ".png");
  }

  RgbImage ReadTile(int level, std::int64_t row, std::int64_t col) const override {
    const PyramidLevel& lv = levels_.at(static_cast<std::size_t>(level));
    const fs::path path = TilePath(level, row, col);
    RgbImage tile;
    try {
      tile = ReadPngRgb(path);
    } catch (const Error& e) {
      throw Error(ErrorCode::kCorruptPyramid, e.what());
    }
    const std::int64_t ew = std::min<std::int64_t>(tile_size_, lv.width - col * tile_size_);
    const std::int64_t eh = std::min<std::int64_t>(tile_size_, lv.height - row * tile_size_);
    if (tile.width != ew || tile.height != eh) {
      throw Error(ErrorCode::kCorruptPyramid, "tile " + path.string() + " has wrong size");
    }
    return tile;
  }

  void CheckComplete() const {
    for (std::size_t k = 0; k < levels_.size(); ++k) {
      const std::int64_t rows = (levels_[k].height + tile_size_ - 1) / tile_size_;
      const std::int64_t cols = (levels_[k].width + tile_size_ - 1) / tile_size_;
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
          const fs::path p = TilePath(static_cast<int>(k), r, c);
          if (!fs::is_regular_file(p)) {
            throw Error(ErrorCode::kCorruptPyramid, "missing tile " + p.string());
          }
        }
      }
    }
  }

 private:
  fs::path root_;
  std::vector<PyramidLevel> levels_;
  int tile_size_;
};

Rational ParseFactor(const json& j) {
  if (j.is_array() && j.size() == 2) {
    return Rational::Make(j[0].get<std::int64_t>(), j[1].get<std::int64_t>());
  }
  return Rational::FromDouble(j.get<double>());
}

SlideHandle OpenTileTree(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorCode::kUnsupportedFormat, "no manifest.json in " + dir.string());
  json manifest;
  std::vector<PyramidLevel> levels;
  double base_mag = 0;
  int tile_size = kPatchSize;
  std::string id;
  try {
    in >> manifest;
    id = manifest.value("slide_id", "");
    base_mag = manifest.at("base_magnification").get<double>();
    tile_size = manifest.value("tile_size", kPatchSize);
    for (const json& lv : manifest.at("levels")) {
      levels.push_back({ParseFactor(lv.at("factor")), lv.at("width").get<std::int64_t>(),
                        lv.at("height").get<std::int64_t>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptPyramid, std::string("bad manifest: ") + e.what());
  }
  if (tile_size <= 0) throw Error(ErrorCode::kCorruptPyramid, "bad tile size");
  auto source = std::make_shared<TileTreeSource>(dir, levels, tile_size);
  source->CheckComplete();
  if (id.empty()) {
    fs::path name = fs::absolute(dir).lexically_normal();
    if (name.filename().empty()) name = name.parent_path();
    id = name.filename().string();
  }
  return std::make_shared<SlidePyramid>(id, base_mag, std::move(levels), std::move(source));
}

}  // namespace

SlideHandle OpenSlide(const fs::path& path) {
  if (fs::is_directory(path)) return OpenTileTree(path);
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kIo, "no such slide: " + path.string());
  }
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".tif" || ext == ".tiff") return internal::OpenTiffPyramid(path);
  throw Error(ErrorCode::kUnsupportedFormat, "unrecognized slide container: " + path.string());
}

SlideHandle MakeMemorySlide(std::string id, double base_magnification,
                            std::vector<Rational> factors,
                            std::vector<RgbImage> rasters) {
  if (factors.size() != rasters.size()) {
    throw Error(ErrorCode::kInvalidArgument, "one factor per raster required");
  }
  std::vector<PyramidLevel> levels;
  for (std::size_t k = 0; k < factors.size(); ++k) {
    levels.push_back({factors[k], rasters[k].width, rasters[k].height});
  }
  return std::make_shared<SlidePyramid>(std::move(id), base_magnification, std::move(levels),
                                        std::make_shared<MemoryTileSource>(std::move(rasters)));
}

void WriteTileTree(const fs::path& dir, double base_magnification,
                   const std::vector<Rational>& factors,
                   const std::vector<RgbImage>& rasters, const std::string& slide_id) {
  fs::create_directories(dir);
  json manifest;
  if (!slide_id.empty()) manifest["slide_id"] = slide_id;
  manifest["base_magnification"] = base_magnification;
  manifest["tile_size"] = kPatchSize;
  manifest["levels"] = json::array();
  for (std::size_t k = 0; k < rasters.size(); ++k) {
    const RgbImage& r = rasters[k];
    manifest["levels"].push_back({{"factor", factors[k].value()},
                                  {"width", r.width},
                                  {"height", r.height}});
    const fs::path level_dir = dir / ("level_" + std::to_string(k));
    fs::create_directories(level_dir);
    for (int row = 0; row * kPatchSize < r.height; ++row) {
      for (int col = 0; col * kPatchSize < r.width; ++col) {
        const int x = col * kPatchSize, y = row * kPatchSize;
        const RgbImage tile = Crop(r, x, y, std::min(kPatchSize, r.width - x),
                                   std::min(kPatchSize, r.height - y));
        WritePngRgb(level_dir / (std::to_string(row) + "_" + std::to_string(col) + ".png"), tile);
      }
    }
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

}  // namespace wsiqc
