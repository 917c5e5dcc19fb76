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

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "viewsynth/geometry.hpp"

namespace viewsynth {

// RGBA raster with channels in [0,1], interleaved row-major. Alpha 0 means
// "no source data here"; the network reads that signal in-band.
struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<float> px;  // 4 * width * height

  RgbaImage() = default;
  RgbaImage(int w, int h) : width(w), height(h), px(4u * w * h, 0.f) {}

  float* at(int x, int y) { return px.data() + 4 * (static_cast<std::size_t>(y) * width + x); }
  const float* at(int x, int y) const {
    return px.data() + 4 * (static_cast<std::size_t>(y) * width + x);
  }

  void fill(float r, float g, float b, float a) {
    for (std::size_t i = 0; i < px.size(); i += 4) {
      px[i] = r;
      px[i + 1] = g;
      px[i + 2] = b;
      px[i + 3] = a;
    }
  }

  bool in_bounds(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
};

struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

// Resamples `src` through `homography`, which maps output pixel coordinates
// (offset by `origin_x/y`) to source pixel coordinates. Output pixels whose
// mapping lands behind the source camera or entirely outside the source get
// RGBA(0,0,0,0). Partially covered bilinear footprints renormalize RGB by the
// accumulated alpha so border pixels do not darken.
//
// The origin offset exists so a region of a larger output can be warped with
// arithmetic identical to warping the whole output: the homography is applied
// to absolute coordinates, never pre-composed with a translation.
inline RgbaImage warp_image(const RgbaImage& src, const Mat3& homography,
                            int out_width, int out_height, double origin_x = 0,
                            double origin_y = 0) {
  RgbaImage out(out_width, out_height);
  const Mat3& h = homography;
  for (int y = 0; y < out_height; ++y) {
    float* row = out.at(0, y);
    const double ty = origin_y + y;
    for (int x = 0; x < out_width; ++x, row += 4) {
      const double tx = origin_x + x;
      const double w = h(2, 0) * tx + h(2, 1) * ty + h(2, 2);
      if (!(w > 0)) continue;  // behind the source camera (or on its plane)
      const double u = (h(0, 0) * tx + h(0, 1) * ty + h(0, 2)) / w;
      const double v = (h(1, 0) * tx + h(1, 1) * ty + h(1, 2)) / w;

      const double fx0 = std::floor(u);
      const double fy0 = std::floor(v);
      const int x0 = static_cast<int>(fx0);
      const int y0 = static_cast<int>(fy0);
      const float ax = static_cast<float>(u - fx0);
      const float ay = static_cast<float>(v - fy0);

      if (ax == 0.f && ay == 0.f) {
        // Integer landing: copy the pixel bit-exactly.
        if (src.in_bounds(x0, y0)) {
          const float* s = src.at(x0, y0);
          row[0] = s[0];
          row[1] = s[1];
          row[2] = s[2];
          row[3] = s[3];
        }
        continue;
      }

      const float wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay,
                            ax * ay};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      float acc_r = 0, acc_g = 0, acc_b = 0, acc_a = 0;
      for (int t = 0; t < 4; ++t) {
        if (wts[t] == 0.f || !src.in_bounds(xs[t], ys[t])) continue;
        const float* s = src.at(xs[t], ys[t]);
        const float wa = wts[t] * s[3];
        acc_r += wa * s[0];
        acc_g += wa * s[1];
        acc_b += wa * s[2];
        acc_a += wa;
      }
      if (acc_a > 0.f) {
        row[0] = acc_r / acc_a;
        row[1] = acc_g / acc_a;
        row[2] = acc_b / acc_a;
        row[3] = std::min(acc_a, 1.f);
      }
    }
  }
  return out;
}

// Area (box) downsample by an integer factor; RGB is alpha-weighted so that
// partially covered blocks keep the color of their covered part.
inline RgbaImage downsample_box(const RgbaImage& src, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (factor == 1) return src;
  if (src.width % factor != 0 || src.height % factor != 0)
    throw std::invalid_argument("image size not divisible by downsample factor");
  RgbaImage out(src.width / factor, src.height / factor);
  const float inv_area = 1.f / (factor * factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      float acc_r = 0, acc_g = 0, acc_b = 0, acc_a = 0;
      for (int dy = 0; dy < factor; ++dy) {
        const float* s = src.at(x * factor, y * factor + dy);
        for (int dx = 0; dx < factor; ++dx, s += 4) {
          const float a = s[3];
          acc_r += a * s[0];
          acc_g += a * s[1];
          acc_b += a * s[2];
          acc_a += a;
        }
      }
      float* o = out.at(x, y);
      if (acc_a > 0.f) {
        o[0] = acc_r / acc_a;
        o[1] = acc_g / acc_a;
        o[2] = acc_b / acc_a;
        o[3] = acc_a * inv_area;
      }
    }
  }
  return out;
}

inline RgbaImage crop(const RgbaImage& src, const Rect& r) {
  if (r.x < 0 || r.y < 0 || r.width <= 0 || r.height <= 0 ||
      r.x + r.width > src.width || r.y + r.height > src.height)
    throw std::invalid_argument("crop rectangle out of bounds");
  RgbaImage out(r.width, r.height);
  for (int y = 0; y < r.height; ++y) {
    const float* s = src.at(r.x, r.y + y);
    std::copy(s, s + 4 * r.width, out.at(0, y));
  }
  return out;
}

}  // namespace viewsynth
