// Copyright 2026 The viewsynth Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "viewsynth/image.hpp"

namespace viewsynth {

// 8-bit values map to [0,1] by v/255 on load; saving rounds v*255 and clamps.

inline std::uint8_t to_byte(float v) {
  const float scaled = std::round(v * 255.f);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.f, 255.f));
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline RgbaImage read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed to decode " + path);
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize to 8-bit RGBA.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_gray_to_rgb(png);
  png_set_filler(png, 0xFF, PNG_FILLER_AFTER);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  std::vector<std::uint8_t> bytes(4u * width * height);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = bytes.data() + 4u * width * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  RgbaImage img(width, height);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img.px[i] = static_cast<float>(bytes[i]) / 255.f;
  return img;
}

inline void write_png(const std::string& path, const RgbaImage& img,
                      bool with_alpha = false) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed to encode " + path);
  }

  png_init_io(png, fp.get());
  const int channels = with_alpha ? 4 : 3;
  png_set_IHDR(png, info, img.width, img.height, 8,
               with_alpha ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> row(static_cast<std::size_t>(channels) * img.width);
  for (int y = 0; y < img.height; ++y) {
    const float* s = img.at(0, y);
    for (int x = 0; x < img.width; ++x, s += 4) {
      row[channels * x + 0] = to_byte(s[0]);
      row[channels * x + 1] = to_byte(s[1]);
      row[channels * x + 2] = to_byte(s[2]);
      if (with_alpha) row[channels * x + 3] = to_byte(s[3]);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// --- Depth raster ------------------------------------------------------------
//
// PNG cannot carry float depth losslessly, so ground-truth depth is stored as
// a raw little-endian binary32 raster: 16-byte header (magic "DSWD", u32
// width, u32 height, u32 reserved) followed by width*height row-major floats.
// Pixels that see no surface hold +infinity.

struct DepthRaster {
  int width = 0;
  int height = 0;
  std::vector<float> depth;

  DepthRaster() = default;
  DepthRaster(int w, int h) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.f) {}

  float& at(int x, int y) { return depth[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return depth[static_cast<std::size_t>(y) * width + x]; }
};

inline void write_depth_raster(const std::string& path, const DepthRaster& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const char magic[4] = {'D', 'S', 'W', 'D'};
  const std::uint32_t w = static_cast<std::uint32_t>(d.width);
  const std::uint32_t h = static_cast<std::uint32_t>(d.height);
  const std::uint32_t reserved = 0;
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&reserved), 4);
  out.write(reinterpret_cast<const char*>(d.depth.data()),
            static_cast<std::streamsize>(d.depth.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write to " + path);
}

inline DepthRaster read_depth_raster(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  char magic[4];
  std::uint32_t w = 0, h = 0, reserved = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&reserved), 4);
  if (!in || std::memcmp(magic, "DSWD", 4) != 0)
    throw std::runtime_error(path + ": not a depth raster");
  DepthRaster d(static_cast<int>(w), static_cast<int>(h));
  in.read(reinterpret_cast<char*>(d.depth.data()),
          static_cast<std::streamsize>(d.depth.size() * sizeof(float)));
  if (!in) throw std::runtime_error(path + ": truncated depth raster");
  return d;
}

}  // namespace viewsynth
