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

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "viewsynth/geometry.hpp"
#include "viewsynth/image.hpp"
#include "viewsynth/png_io.hpp"

namespace viewsynth {

enum class DepthScheme {
  kInverseUniform,  // uniform steps in 1/d: constant disparity per plane
  kUniform,         // uniform steps in d
};

struct DepthSampling {
  double d_min = 1;
  double d_max = 2;
  int count = 2;
  DepthScheme scheme = DepthScheme::kInverseUniform;

  void validate() const {
    if (!(d_min > 0) || !(d_min < d_max))
      throw std::invalid_argument("depth sampling requires 0 < d_min < d_max");
    if (count < 2) throw std::invalid_argument("depth sampling needs >= 2 planes");
  }
};

// Strictly increasing depths from d_min to d_max inclusive.
inline std::vector<double> depth_planes(const DepthSampling& s) {
  s.validate();
  std::vector<double> d(static_cast<std::size_t>(s.count));
  d.front() = s.d_min;
  d.back() = s.d_max;
  for (int i = 1; i + 1 < s.count; ++i) {
    const double t = static_cast<double>(i) / (s.count - 1);
    if (s.scheme == DepthScheme::kInverseUniform) {
      const double inv = (1 - t) / s.d_min + t / s.d_max;
      d[i] = 1.0 / inv;
    } else {
      d[i] = s.d_min + t * (s.d_max - s.d_min);
    }
  }
  return d;
}

// One source image warped into the target camera at each sweep depth.
// Plane z covers `region` of the target pixel grid at depth depths[z].
struct PlaneSweepVolume {
  int source_index = 0;
  Rect region;
  std::vector<RgbaImage> planes;
};

struct SourceView {
  const RgbaImage* image = nullptr;
  Camera camera;
};

inline PlaneSweepVolume build_psv_for_source(const SourceView& source,
                                             int source_index,
                                             const Camera& target,
                                             const std::vector<double>& depths,
                                             const Rect& region) {
  PlaneSweepVolume vol;
  vol.source_index = source_index;
  vol.region = region;
  vol.planes.reserve(depths.size());
  for (double d : depths) {
    const PlaneHomography h = plane_homography(source.camera, target, d);
    if (h.degenerate) {
      vol.planes.emplace_back(region.width, region.height);  // all alpha 0
    } else {
      vol.planes.push_back(warp_image(*source.image, h.matrix, region.width,
                                      region.height, region.x, region.y));
    }
  }
  return vol;
}

// Builds one volume per source. `region` selects the target-image rectangle
// the planes cover; it may extend past the nominal target frame (context
// margins do), in which case out-of-view source data simply arrives as
// alpha 0.
inline std::vector<PlaneSweepVolume> build_psv(
    const std::vector<SourceView>& sources, const Camera& target,
    const DepthSampling& sampling, const Rect& region) {
  if (sources.empty()) throw std::invalid_argument("build_psv: no sources");
  const std::vector<double> depths = depth_planes(sampling);
  std::vector<PlaneSweepVolume> vols;
  vols.reserve(sources.size());
  for (std::size_t k = 0; k < sources.size(); ++k)
    vols.push_back(build_psv_for_source(sources[k], static_cast<int>(k),
                                        target, depths, region));
  return vols;
}

// Debug dump: plane z of volume k as psv_s{k}_z{z}.png plus a text index of
// the sweep depths.
inline void dump_psv(const std::string& dir,
                     const std::vector<PlaneSweepVolume>& vols,
                     const std::vector<double>& depths) {
  std::filesystem::create_directories(dir);
  for (const auto& vol : vols) {
    for (std::size_t z = 0; z < vol.planes.size(); ++z) {
      const std::string name = dir + "/psv_s" + std::to_string(vol.source_index) +
                               "_z" + std::to_string(z) + ".png";
      write_png(name, vol.planes[z], /*with_alpha=*/true);
    }
  }
  std::ofstream index(dir + "/psv_index.txt");
  index << "plane depth\n";
  for (std::size_t z = 0; z < depths.size(); ++z)
    index << z << " " << depths[z] << "\n";
}

}  // namespace viewsynth
