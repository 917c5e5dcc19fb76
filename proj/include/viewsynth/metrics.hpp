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

#include <cmath>
#include <vector>

#include "viewsynth/dataset.hpp"
#include "viewsynth/image.hpp"
#include "viewsynth/png_io.hpp"
#include "viewsynth/tensor.hpp"

namespace viewsynth {

// RGB <-> tensor interop. Tensors are channel-planar [3,H,W] in [0,1] only at
// the file boundary; network outputs are unclamped until saved.

inline Tensor<float> rgb_tensor(const RgbaImage& img) {
  Tensor<float> t(Shape{3, img.height, img.width});
  const std::int64_t hw = static_cast<std::int64_t>(img.height) * img.width;
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < hw; ++i) t[c * hw + i] = img.px[4 * i + c];
  return t;
}

inline Tensor<float> rgb_tensor_crop(const RgbaImage& img, const Rect& r) {
  Tensor<float> t(Shape{3, r.height, r.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < r.height; ++y)
      for (int x = 0; x < r.width; ++x)
        t.at(c, y, x) = img.at(r.x + x, r.y + y)[c];
  return t;
}

// Clamps to [0,1]; alpha is set to 1.
inline RgbaImage image_from_rgb(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(0) != 3)
    throw std::invalid_argument("image_from_rgb: want [3,H,W]");
  RgbaImage img(t.dim(2), t.dim(1));
  const std::int64_t hw = static_cast<std::int64_t>(img.height) * img.width;
  for (std::int64_t i = 0; i < hw; ++i) {
    for (int c = 0; c < 3; ++c)
      img.px[4 * i + c] = std::clamp(t[c * hw + i], 0.f, 1.f);
    img.px[4 * i + 3] = 1.f;
  }
  return img;
}

// Snaps to the 8-bit grid a PNG round trip would produce; evaluation metrics
// run on this so they can be recomputed exactly from the written files.
inline Tensor<float> quantize_to_bytes(const Tensor<float>& t) {
  Tensor<float> out(t.shape());
  for (std::int64_t i = 0; i < t.size(); ++i)
    out[i] = static_cast<float>(to_byte(t[i])) / 255.f;
  return out;
}

// Mean per-pixel-per-channel absolute difference.
inline double mean_l1(const Tensor<float>& a, const Tensor<float>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mean_l1: shape mismatch");
  double sum = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    sum += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return sum / static_cast<double>(a.size());
}

inline double mean_squared_error(const Tensor<float>& a, const Tensor<float>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
  double sum = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

// PSNR on [0,1] channels, capped at 99 dB so identical images stay finite.
inline double psnr_from_mse(double mse) {
  if (mse <= 0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

inline double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  return psnr_from_mse(mean_squared_error(a, b));
}

inline RgbaImage side_by_side(const RgbaImage& left, const RgbaImage& right) {
  if (left.height != right.height)
    throw std::invalid_argument("side_by_side: height mismatch");
  RgbaImage out(left.width + right.width, left.height);
  for (int y = 0; y < out.height; ++y) {
    std::copy(left.at(0, y), left.at(0, y) + 4 * left.width, out.at(0, y));
    std::copy(right.at(0, y), right.at(0, y) + 4 * right.width,
              out.at(left.width, y));
  }
  return out;
}

// --- depth ground truth -----------------------------------------------------

// Index of the sweep plane nearest in inverse depth (the sweep is uniform in
// 1/d, so this is the natural metric). Pixels with non-finite depth get -1.
inline std::vector<int> nearest_plane_map(const DepthRaster& depth,
                                          const std::vector<double>& planes) {
  std::vector<int> out(depth.depth.size(), -1);
  for (std::size_t i = 0; i < depth.depth.size(); ++i) {
    const float d = depth.depth[i];
    if (!std::isfinite(d) || d <= 0) continue;
    const double inv = 1.0 / d;
    int best = 0;
    double best_err = std::abs(inv - 1.0 / planes[0]);
    for (std::size_t z = 1; z < planes.size(); ++z) {
      const double err = std::abs(inv - 1.0 / planes[z]);
      if (err < best_err) {
        best_err = err;
        best = static_cast<int>(z);
      }
    }
    out[i] = best;
  }
  return out;
}

// True where the target pixel's scene point is visible in every source view:
// reprojects at ground-truth depth and compares against each source's depth
// raster (relative tolerance). Pixels without finite depth are excluded.
inline std::vector<bool> unoccluded_mask(const SceneData& scene, int target_view,
                                         const std::vector<int>& source_views,
                                         double rel_tol = 0.01) {
  const DepthRaster& tgt_depth = scene.depths.at(target_view);
  const Camera& tgt_cam = scene.cameras.at(target_view);
  std::vector<bool> mask(tgt_depth.depth.size(), false);
  for (int y = 0; y < tgt_depth.height; ++y) {
    for (int x = 0; x < tgt_depth.width; ++x) {
      const float d = tgt_depth.at(x, y);
      if (!std::isfinite(d) || d <= 0) continue;
      const Vec3 world = unproject(tgt_cam, Vec2(x, y), d);
      bool visible = true;
      for (int s : source_views) {
        const auto proj = project(scene.cameras.at(s), world);
        if (!proj) {
          visible = false;
          break;
        }
        const DepthRaster& sd = scene.depths.at(s);
        const int sx = static_cast<int>(std::lround(proj->pixel.x()));
        const int sy = static_cast<int>(std::lround(proj->pixel.y()));
        if (sx < 0 || sy < 0 || sx >= sd.width || sy >= sd.height) {
          visible = false;
          break;
        }
        const float ds = sd.at(sx, sy);
        if (!std::isfinite(ds) || std::abs(ds - proj->depth) > rel_tol * proj->depth) {
          visible = false;
          break;
        }
      }
      mask[static_cast<std::size_t>(y) * tgt_depth.width + x] = visible;
    }
  }
  return mask;
}

struct AgreementCounts {
  std::int64_t agree = 0;
  std::int64_t considered = 0;

  double fraction() const {
    return considered == 0 ? 0.0 : static_cast<double>(agree) / considered;
  }
};

// Counts masked pixels whose selection argmax equals the ground-truth nearest
// plane. selection is [D,H,W].
inline AgreementCounts argmax_agreement_counts(const Tensor<float>& selection,
                                               const std::vector<int>& nearest,
                                               const std::vector<bool>& mask) {
  const int d = selection.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(selection.dim(1)) * selection.dim(2);
  AgreementCounts counts;
  for (std::int64_t i = 0; i < hw; ++i) {
    if (!mask[static_cast<std::size_t>(i)] || nearest[static_cast<std::size_t>(i)] < 0)
      continue;
    int best = 0;
    float best_v = selection[i];
    for (int z = 1; z < d; ++z) {
      const float v = selection[z * hw + i];
      if (v > best_v) {
        best_v = v;
        best = z;
      }
    }
    ++counts.considered;
    if (best == nearest[static_cast<std::size_t>(i)]) ++counts.agree;
  }
  return counts;
}

inline double argmax_agreement(const Tensor<float>& selection,
                               const std::vector<int>& nearest,
                               const std::vector<bool>& mask) {
  return argmax_agreement_counts(selection, nearest, mask).fraction();
}

}  // namespace viewsynth
