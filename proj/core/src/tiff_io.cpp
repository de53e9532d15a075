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

#include <tiffio.h>

#include <cstring>
#include <memory>
#include <mutex>

#include "json.hpp"
#include "tiff_source.hpp"
#include "wsiqc/error.hpp"

// Pyramid TIFF layout: one tiled RGB8 page per level, level 0 first. Each
// page's ImageDescription holds {"wsiqc":{"factor":f,"base_magnification":m}}.

namespace wsiqc {
namespace internal {
namespace {

using json = nlohmann::json;

struct TiffCloser {
  void operator()(TIFF* t) const { TIFFClose(t); }
};
using TiffPtr = std::unique_ptr<TIFF, TiffCloser>;

void SilenceLibtiff() {
  static std::once_flag once;
  std::call_once(once, [] {
    TIFFSetWarningHandler(nullptr);
    TIFFSetErrorHandler(nullptr);
  });
}

class TiffTileSource final : public TileSource {
 public:
  TiffTileSource(TiffPtr tiff, int tile_size) : tiff_(std::move(tiff)), tile_size_(tile_size) {}

  int tile_size() const override { return tile_size_; }

  RgbImage ReadTile(int level, std::int64_t row, std::int64_t col) const override {
    std::lock_guard lock(mutex_);
    TIFF* t = tiff_.get();
    if (!TIFFSetDirectory(t, static_cast<tdir_t>(level))) {
      throw Error(ErrorCode::kCorruptPyramid, "missing TIFF page " + std::to_string(level));
    }
    std::uint32_t width = 0, height = 0;
    TIFFGetField(t, TIFFTAG_IMAGEWIDTH, &width);
    TIFFGetField(t, TIFFTAG_IMAGELENGTH, &height);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(TIFFTileSize(t)));
    const std::uint32_t x = static_cast<std::uint32_t>(col * tile_size_);
    const std::uint32_t y = static_cast<std::uint32_t>(row * tile_size_);
    if (TIFFReadEncodedTile(t, TIFFComputeTile(t, x, y, 0, 0), buf.data(),
                            static_cast<tmsize_t>(buf.size())) < 0) {
      throw Error(ErrorCode::kCorruptPyramid, "cannot decode TIFF tile");
    }
    const int w = static_cast<int>(std::min<std::uint32_t>(tile_size_, width - x));
    const int h = static_cast<int>(std::min<std::uint32_t>(tile_size_, height - y));
    RgbImage out(w, h);
    for (int yy = 0; yy < h; ++yy) {
      std::memcpy(out.px(0, yy), buf.data() + static_cast<std::size_t>(yy) * tile_size_ * 3,
                  static_cast<std::size_t>(w) * 3);
    }
    return out;
  }

 private:
  TiffPtr tiff_;
  int tile_size_;
  mutable std::mutex mutex_;
};

}  // namespace

SlideHandle OpenTiffPyramid(const std::filesystem::path& path) {
  SilenceLibtiff();
  TiffPtr tiff(TIFFOpen(path.c_str(), "r"));
  if (!tiff) throw Error(ErrorCode::kUnsupportedFormat, "not a TIFF: " + path.string());
  TIFF* t = tiff.get();

  std::vector<PyramidLevel> levels;
  double base_mag = 0;
  int tile_size = 0;
  tdir_t dir = 0;
  do {
    std::uint32_t width = 0, height = 0, tw = 0, th = 0;
    std::uint16_t spp = 0, bps = 0, planar = PLANARCONFIG_CONTIG;
    TIFFGetField(t, TIFFTAG_IMAGEWIDTH, &width);
    TIFFGetField(t, TIFFTAG_IMAGELENGTH, &height);
    TIFFGetFieldDefaulted(t, TIFFTAG_SAMPLESPERPIXEL, &spp);
    TIFFGetFieldDefaulted(t, TIFFTAG_BITSPERSAMPLE, &bps);
    TIFFGetFieldDefaulted(t, TIFFTAG_PLANARCONFIG, &planar);
    if (!TIFFIsTiled(t) || !TIFFGetField(t, TIFFTAG_TILEWIDTH, &tw) ||
        !TIFFGetField(t, TIFFTAG_TILELENGTH, &th)) {
      throw Error(ErrorCode::kUnsupportedFormat, "TIFF page is not tiled");
    }
    if (spp != 3 || bps != 8 || planar != PLANARCONFIG_CONTIG || tw != th) {
      throw Error(ErrorCode::kUnsupportedFormat, "TIFF page must be square-tiled RGB8");
    }
    if (tile_size == 0) tile_size = static_cast<int>(tw);
    if (static_cast<int>(tw) != tile_size) {
      throw Error(ErrorCode::kCorruptPyramid, "inconsistent tile size across pages");
    }
    char* desc = nullptr;
    if (!TIFFGetField(t, TIFFTAG_IMAGEDESCRIPTION, &desc) || desc == nullptr) {
      throw Error(ErrorCode::kUnsupportedFormat, "TIFF page lacks level metadata");
    }
    Rational factor;
    try {
      const json meta = json::parse(desc).at("wsiqc");
      factor = Rational::FromDouble(meta.at("factor").get<double>());
      if (dir == 0) base_mag = meta.at("base_magnification").get<double>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kUnsupportedFormat, std::string("bad level metadata: ") + e.what());
    }
    levels.push_back({factor, width, height});
    ++dir;
  } while (TIFFReadDirectory(t));

  std::string id = path.stem().string();
  return std::make_shared<SlidePyramid>(
      id, base_mag, std::move(levels),
      std::make_shared<TiffTileSource>(std::move(tiff), tile_size));
}

}  // namespace internal

void WriteTiffPyramid(const std::filesystem::path& path, double base_magnification,
                      const std::vector<Rational>& factors,
                      const std::vector<RgbImage>& rasters) {
  internal::SilenceLibtiff();
  internal::TiffPtr tiff(TIFFOpen(path.c_str(), "w"));
  if (!tiff) throw Error(ErrorCode::kIo, "cannot create " + path.string());
  TIFF* t = tiff.get();
  constexpr std::uint32_t ts = kPatchSize;
  for (std::size_t k = 0; k < rasters.size(); ++k) {
    const RgbImage& r = rasters[k];
    TIFFSetField(t, TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(r.width));
    TIFFSetField(t, TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(r.height));
    TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, 3);
    TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, 8);
    TIFFSetField(t, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_RGB);
    TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(t, TIFFTAG_COMPRESSION, COMPRESSION_ADOBE_DEFLATE);
    TIFFSetField(t, TIFFTAG_TILEWIDTH, ts);
    TIFFSetField(t, TIFFTAG_TILELENGTH, ts);
    if (k > 0) TIFFSetField(t, TIFFTAG_SUBFILETYPE, FILETYPE_REDUCEDIMAGE);
    const std::string desc =
        nlohmann::json{{"wsiqc", {{"factor", factors[k].value()},
                        {"base_magnification", base_magnification}}}}
            .dump();
    TIFFSetField(t, TIFFTAG_IMAGEDESCRIPTION, desc.c_str());

    std::vector<std::uint8_t> buf(static_cast<std::size_t>(ts) * ts * 3);
    for (std::uint32_t y = 0; y < static_cast<std::uint32_t>(r.height); y += ts) {
      for (std::uint32_t x = 0; x < static_cast<std::uint32_t>(r.width); x += ts) {
        std::fill(buf.begin(), buf.end(), 0);
        const std::uint32_t w = std::min<std::uint32_t>(ts, r.width - x);
        const std::uint32_t h = std::min<std::uint32_t>(ts, r.height - y);
        for (std::uint32_t yy = 0; yy < h; ++yy) {
          std::memcpy(buf.data() + static_cast<std::size_t>(yy) * ts * 3,
                      r.px(static_cast<int>(x), static_cast<int>(y + yy)),
                      static_cast<std::size_t>(w) * 3);
        }
        if (TIFFWriteEncodedTile(t, TIFFComputeTile(t, x, y, 0, 0), buf.data(),
                                 static_cast<tmsize_t>(buf.size())) < 0) {
          throw Error(ErrorCode::kIo, "TIFF tile write failed");
        }
      }
    }
    if (!TIFFWriteDirectory(t)) throw Error(ErrorCode::kIo, "TIFF directory write failed");
  }
}

}  // namespace wsiqc
