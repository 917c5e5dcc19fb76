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

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>
#include <vector>

#include "viewsynth/metrics.hpp"
#include "viewsynth/network.hpp"
#include "viewsynth/psv.hpp"

namespace viewsynth {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0,n) on `threads` workers. Work items must be
// independent; each writes only its own output slot, so scheduling cannot
// change results.
template <typename Fn>
void parallel_for(int n, int threads, Fn fn) {
  threads = std::min(resolve_threads(threads), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct RenderOptions {
  int threads = 0;              // 0 = hardware concurrency
  bool collect_planes = false;  // keep full selection/color volumes
  std::vector<double>* tile_ms = nullptr;  // per-tile wall time, when wanted
};

struct RenderResult {
  Tensor<float> image;      // [3, H, W]
  Tensor<float> selection;  // [D, H, W] when collect_planes
  Tensor<float> color;      // [D, 3, H, W] when collect_planes
};

// Renders a full frame by tiling the target into patch-size outputs; each
// patch builds its own plane sweep crops (plus receptive-field margin) and
// runs one forward pass. Valid convolutions make the tiles seamless, and
// because every tile applies the homographies to absolute target
// coordinates, re-tiling cannot change a pixel.
inline RenderResult render_frame(const std::vector<SourceView>& sources,
                                 const Camera& target,
                                 const ParamMap<float>& params,
                                 const TowerConfig& cfg,
                                 const DepthSampling& sampling,
                                 const RenderOptions& opt = {}) {
  cfg.validate();
  if (static_cast<int>(sources.size()) != cfg.source_count)
    throw std::invalid_argument("render_frame: source count mismatch");
  const int w = target.intrinsics.width;
  const int h = target.intrinsics.height;
  const int p = cfg.patch_size;
  if (w < p || h < p)
    throw std::invalid_argument("render_frame: frame smaller than patch");

  std::vector<int> xs, ys;
  for (int x = 0; x + p < w + 1; x += p) xs.push_back(x);
  if (xs.back() + p < w) xs.push_back(w - p);  // clamp the last tile
  for (int y = 0; y + p < h + 1; y += p) ys.push_back(y);
  if (ys.back() + p < h) ys.push_back(h - p);

  RenderResult out;
  out.image = Tensor<float>(Shape{3, h, w});
  if (opt.collect_planes) {
    out.selection = Tensor<float>(Shape{cfg.depth_planes, h, w});
    out.color = Tensor<float>(Shape{cfg.depth_planes, 3, h, w});
  }

  const int tiles = static_cast<int>(xs.size() * ys.size());
  if (opt.tile_ms) opt.tile_ms->assign(static_cast<std::size_t>(tiles), 0.0);
  parallel_for(tiles, opt.threads, [&](int tile) {
    const auto tile_start = std::chrono::steady_clock::now();
    const int ox = xs[static_cast<std::size_t>(tile) % xs.size()];
    const int oy = ys[static_cast<std::size_t>(tile) / xs.size()];
    const Rect out_rect{ox, oy, p, p};
    const int extent = cfg.max_context_extent(p);
    const Rect ctx = centered_rect(out_rect, extent, extent);
    const auto psvs = build_psv(sources, target, sampling, ctx);
    const auto inputs = multires_preprocess<float>(psvs, out_rect, cfg);
    const auto result = forward(inputs, params, cfg);

    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          out.image[c * hw + static_cast<std::int64_t>(oy + y) * w + ox + x] =
              result.image.at(c, y, x);
    if (opt.collect_planes) {
      for (int z = 0; z < cfg.depth_planes; ++z)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x) {
            out.selection[z * hw + static_cast<std::int64_t>(oy + y) * w + ox + x] =
                result.selection.at(z, y, x);
            for (int c = 0; c < 3; ++c)
              out.color[(static_cast<std::int64_t>(z) * 3 + c) * hw +
                        static_cast<std::int64_t>(oy + y) * w + ox + x] =
                  result.color.at(z, c, y, x);
          }
    }
    if (opt.tile_ms)
      (*opt.tile_ms)[static_cast<std::size_t>(tile)] =
          std::chrono::duration<double, std::milli>(
              std::chrono::steady_clock::now() - tile_start)
              .count();
  });
  return out;
}

// Source views for rendering view `target` of a scene: every other view
// within the baseline window, nearest first, truncated to K and then ordered
// by signed x-offset. The fixed ordering matters: tower input channels are
// assigned by source slot.
inline std::vector<int> pick_sources(const SceneData& scene, int target,
                                     int count, double max_baseline) {
  const Vec3 tc = scene.cameras.at(target).center();
  std::vector<std::pair<double, int>> candidates;
  for (int v = 0; v < scene.view_count(); ++v) {
    if (v == target) continue;
    const double dist = (scene.cameras[v].center() - tc).norm();
    if (dist <= max_baseline) candidates.emplace_back(dist, v);
  }
  std::sort(candidates.begin(), candidates.end());
  if (static_cast<int>(candidates.size()) < count) return {};
  candidates.resize(static_cast<std::size_t>(count));
  std::sort(candidates.begin(), candidates.end(), [&](const auto& a, const auto& b) {
    const double ax = scene.cameras[a.second].center().x() - tc.x();
    const double bx = scene.cameras[b.second].center().x() - tc.x();
    return ax != bx ? ax < bx : a.second < b.second;
  });
  std::vector<int> views;
  for (const auto& [dist, v] : candidates) views.push_back(v);
  return views;
}

inline std::vector<SourceView> source_views(const SceneData& scene,
                                            const std::vector<int>& views) {
  std::vector<SourceView> out;
  out.reserve(views.size());
  for (int v : views) out.push_back({&scene.images.at(v), scene.cameras.at(v)});
  return out;
}

}  // namespace viewsynth
