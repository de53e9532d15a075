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

#include "wsiqc/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "wsiqc/error.hpp"

namespace wsiqc {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

template <typename Image>
Image ReadWithFormat(const std::filesystem::path& path, png_uint_32 format,
                     int channels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error(ErrorCode::kIo, "cannot read PNG " + path.string() + ": " +
                                    image.message);
  }
  image.format = format;
  Image out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.data.resize(static_cast<std::size_t>(image.width) * image.height * channels);
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::kIo, "cannot decode PNG " + path.string() + ": " +
                                    image.message);
  }
  return out;
}

// Classic libpng writer; the simplified API cannot emit 1-bit images or
// choose a compression level.
void WriteClassic(const std::filesystem::path& path, int width, int height,
                  int bit_depth, int color_type, int compression_level,
                  const std::vector<const png_byte*>& rows) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "libpng write failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, compression_level);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (const png_byte* row : rows) png_write_row(png, row);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

RgbImage ReadPngRgb(const std::filesystem::path& path) {
  return ReadWithFormat<RgbImage>(path, PNG_FORMAT_RGB, 3);
}

GrayImage ReadPngGray(const std::filesystem::path& path) {
  return ReadWithFormat<GrayImage>(path, PNG_FORMAT_GRAY, 1);
}

void WritePngRgb(const std::filesystem::path& path, const RgbImage& img,
                 int compression_level) {
  std::vector<const png_byte*> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[y] = img.px(0, y);
  WriteClassic(path, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               compression_level, rows);
}

void WritePngGray(const std::filesystem::path& path, const GrayImage& img,
                  int compression_level) {
  std::vector<const png_byte*> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    rows[y] = img.data.data() + static_cast<std::size_t>(y) * img.width;
  }
  WriteClassic(path, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY,
               compression_level, rows);
}

void WritePngMask(const std::filesystem::path& path, const GrayImage& bits) {
  const std::size_t stride = (static_cast<std::size_t>(bits.width) + 7) / 8;
  std::vector<png_byte> packed(stride * bits.height, 0);
  for (int y = 0; y < bits.height; ++y) {
    for (int x = 0; x < bits.width; ++x) {
      if (bits.at(x, y)) packed[y * stride + x / 8] |= static_cast<png_byte>(0x80 >> (x % 8));
    }
  }
  std::vector<const png_byte*> rows(static_cast<std::size_t>(bits.height));
  for (int y = 0; y < bits.height; ++y) rows[y] = packed.data() + y * stride;
  WriteClassic(path, bits.width, bits.height, 1, PNG_COLOR_TYPE_GRAY, 6, rows);
}

}  // namespace wsiqc
