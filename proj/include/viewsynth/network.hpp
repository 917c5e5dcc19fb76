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

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "viewsynth/autodiff.hpp"
#include "viewsynth/psv.hpp"
#include "viewsynth/rng.hpp"

namespace viewsynth {

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

struct ConvSpec {
  int kernel = 3;
  int channels = 32;
};

// Dual-tower architecture description.
//
// Both towers share the same two-stage per-plane structure (with separate
// parameters): a per-pathway conv stack applied to every sweep plane with
// shared weights, pathway outputs upsampled (nearest neighbor) to a common
// size and concatenated, then a post-merge conv stack. The selection tower
// appends per-pixel cross-depth layers (1x1 convolutions over the
// depth-concatenated features) ending in tanh then a softmax over depth; the
// color tower appends a linear 1x1 reconstruction layer to RGB.
//
// All convolutions are valid-mode, so spatial sizes shrink deterministically;
// with the default patch size 8 and total shrink 18 the full-resolution input
// is 26x26 and patches tile without border effects.
struct TowerConfig {
  std::vector<ConvSpec> per_plane;   // per-pathway stage (weights per pathway)
  std::vector<ConvSpec> post_merge;  // after pathway concat
  std::vector<int> cross_depth;      // hidden widths; a final width-D layer
                                     // (tanh, then softmax) is always appended
  int resolutions = 4;               // pathway r covers a 2^r-scaled context
  int depth_planes = 96;
  int source_count = 5;
  int patch_size = 8;

  int per_plane_shrink() const {
    int s = 0;
    for (const auto& c : per_plane) s += c.kernel - 1;
    return s;
  }
  int post_merge_shrink() const {
    int s = 0;
    for (const auto& c : post_merge) s += c.kernel - 1;
    return s;
  }
  int total_shrink() const { return per_plane_shrink() + post_merge_shrink(); }

  // Size of the merged (post-upsample) feature map for a given output size.
  int merged_size(int out_size) const { return out_size + post_merge_shrink(); }

  // Pathway input size at the pathway's own scale.
  int pathway_input_size(int r, int out_size) const {
    return merged_size(out_size) / (1 << r) + per_plane_shrink();
  }

  // Full-resolution extent of pathway r's context window.
  int context_extent(int r, int out_size) const {
    return pathway_input_size(r, out_size) << r;
  }

  int max_context_extent(int out_size) const {
    return context_extent(resolutions - 1, out_size);
  }

  int input_channels() const { return 4 * source_count; }
  int feature_channels() const { return post_merge.back().channels; }

  void validate() const {
    if (per_plane.empty() || post_merge.empty())
      throw std::invalid_argument("tower config: empty conv stage");
    for (const auto& stage : {per_plane, post_merge})
      for (const auto& c : stage) {
        if (c.kernel < 1 || c.kernel % 2 == 0)
          throw std::invalid_argument("tower config: kernels must be odd");
        if (c.channels < 1)
          throw std::invalid_argument("tower config: channels must be >= 1");
      }
    for (int w : cross_depth)
      if (w < 1) throw std::invalid_argument("tower config: cross-depth width");
    if (resolutions < 1 || resolutions > 6)
      throw std::invalid_argument("tower config: resolutions in [1,6]");
    if (depth_planes < 2)
      throw std::invalid_argument("tower config: need >= 2 depth planes");
    if (source_count < 1)
      throw std::invalid_argument("tower config: need >= 1 source");
    if (patch_size < 1)
      throw std::invalid_argument("tower config: patch size must be >= 1");
    check_output_size(patch_size);
  }

  // Receptive-field bookkeeping for a requested output size: the merged map
  // must subdivide evenly into every pathway's scale and every conv in both
  // stages must see an input at least as large as its kernel.
  void check_output_size(int out_size) const {
    const int merged = merged_size(out_size);
    for (int r = 0; r < resolutions; ++r) {
      const int f = 1 << r;
      if (merged % f != 0)
        throw std::invalid_argument(
            "tower config: merged size " + std::to_string(merged) +
            " not divisible by pathway factor " + std::to_string(f));
      int s = pathway_input_size(r, out_size);
      for (const auto& c : per_plane) {
        if (s < c.kernel)
          throw std::invalid_argument("tower config: pathway input too small");
        s -= c.kernel - 1;
      }
    }
    int s = merged;
    for (const auto& c : post_merge) {
      if (s < c.kernel)
        throw std::invalid_argument("tower config: merged map too small");
      s -= c.kernel - 1;
    }
  }

  // 26x26 -> 8x8 full-scale architecture; per-layer sizes are configuration,
  // chosen so that four pathways upsample onto a merged map of 16.
  static TowerConfig full_default(int depth_planes = 96, int sources = 5) {
    TowerConfig c;
    c.per_plane = {{3, 32}, {3, 32}, {3, 48}, {3, 48}, {3, 48}};
    c.post_merge = {{3, 64}, {3, 64}, {3, 48}, {3, 48}};
    c.cross_depth = {96};
    c.resolutions = 4;
    c.depth_planes = depth_planes;
    c.source_count = sources;
    c.patch_size = 8;
    return c;
  }

  // Single-pathway variant for desk-scale training; same 26x26 -> 8x8
  // receptive-field contract.
  static TowerConfig desk_default(int depth_planes = 16, int sources = 5) {
    TowerConfig c;
    c.per_plane = {{5, 28}, {5, 28}, {3, 36}};
    c.post_merge = {{5, 44}, {5, 36}};
    c.cross_depth = {72};
    c.resolutions = 1;
    c.depth_planes = depth_planes;
    c.source_count = sources;
    c.patch_size = 8;
    return c;
  }

  // Narrower single-pathway variant: the default run configuration for
  // CPU-budget training.
  static TowerConfig desk_small(int depth_planes = 16, int sources = 5) {
    TowerConfig c;
    c.per_plane = {{5, 14}, {5, 14}, {3, 18}};
    c.post_merge = {{5, 24}, {5, 18}};
    c.cross_depth = {48};
    c.resolutions = 1;
    c.depth_planes = depth_planes;
    c.source_count = sources;
    c.patch_size = 8;
    return c;
  }

  // 6x6 -> 2x2 configuration small enough for end-to-end finite differences.
  static TowerConfig tiny(int depth_planes = 3, int sources = 2) {
    TowerConfig c;
    c.per_plane = {{3, 4}};
    c.post_merge = {{3, 6}};
    c.cross_depth = {8};
    c.resolutions = 1;
    c.depth_planes = depth_planes;
    c.source_count = sources;
    c.patch_size = 2;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ConvSpec& c) {
  j = nlohmann::json{{"kernel", c.kernel}, {"channels", c.channels}};
}
inline void from_json(const nlohmann::json& j, ConvSpec& c) {
  j.at("kernel").get_to(c.kernel);
  j.at("channels").get_to(c.channels);
}
inline void to_json(nlohmann::json& j, const TowerConfig& c) {
  j = nlohmann::json{{"per_plane", c.per_plane},
                     {"post_merge", c.post_merge},
                     {"cross_depth", c.cross_depth},
                     {"resolutions", c.resolutions},
                     {"depth_planes", c.depth_planes},
                     {"source_count", c.source_count},
                     {"patch_size", c.patch_size}};
}
inline void from_json(const nlohmann::json& j, TowerConfig& c) {
  j.at("per_plane").get_to(c.per_plane);
  j.at("post_merge").get_to(c.post_merge);
  j.at("cross_depth").get_to(c.cross_depth);
  j.at("resolutions").get_to(c.resolutions);
  j.at("depth_planes").get_to(c.depth_planes);
  j.at("source_count").get_to(c.source_count);
  j.at("patch_size").get_to(c.patch_size);
}

// --- parameters -----------------------------------------------------------

namespace detail {

inline Tensor<float> glorot(Shape shape, int fan_in, int fan_out, Rng& rng) {
  Tensor<float> t(std::move(shape));
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(rng.uniform(-a, a));
  return t;
}

struct LayerDims {
  std::string name;  // parameter prefix, e.g. "sel.p0.c1"
  int in_ch, out_ch, kernel;
  bool zero_init = false;
};

// The full layer list in a fixed order; initialization draws and checkpoint
// arrays both follow it.
inline std::vector<LayerDims> layer_plan(const TowerConfig& cfg) {
  std::vector<LayerDims> plan;
  for (const std::string tower : {"sel", "col"}) {
    for (int r = 0; r < cfg.resolutions; ++r) {
      int in_ch = cfg.input_channels();
      for (std::size_t i = 0; i < cfg.per_plane.size(); ++i) {
        plan.push_back({tower + ".p" + std::to_string(r) + ".c" + std::to_string(i),
                        in_ch, cfg.per_plane[i].channels, cfg.per_plane[i].kernel});
        in_ch = cfg.per_plane[i].channels;
      }
    }
    int in_ch = cfg.per_plane.back().channels * cfg.resolutions;
    for (std::size_t i = 0; i < cfg.post_merge.size(); ++i) {
      plan.push_back({tower + ".m.c" + std::to_string(i), in_ch,
                      cfg.post_merge[i].channels, cfg.post_merge[i].kernel});
      in_ch = cfg.post_merge[i].channels;
    }
    if (tower == "sel") {
      int d_in = cfg.feature_channels() * cfg.depth_planes;
      for (std::size_t i = 0; i < cfg.cross_depth.size(); ++i) {
        plan.push_back({"sel.d.c" + std::to_string(i), d_in, cfg.cross_depth[i], 1});
        d_in = cfg.cross_depth[i];
      }
      // Final depth layer starts at zero: the selection map opens uniform
      // instead of arbitrarily favoring planes.
      plan.push_back({"sel.d.c" + std::to_string(cfg.cross_depth.size()), d_in,
                      cfg.depth_planes, 1, /*zero_init=*/true});
    } else {
      plan.push_back({"col.out", cfg.feature_channels(), 3, 1});
    }
  }
  return plan;
}

}  // namespace detail

// Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases; the final
// cross-depth layer is zeroed entirely. Draw order is the fixed layer-plan
// order, so a seed fully determines the parameters.
inline ParamMap<float> init_params(const TowerConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamMap<float> params;
  for (const auto& l : detail::layer_plan(cfg)) {
    const int fan_in = l.in_ch * l.kernel * l.kernel;
    const int fan_out = l.out_ch * l.kernel * l.kernel;
    Tensor<float> w =
        l.zero_init
            ? Tensor<float>(Shape{l.out_ch, l.in_ch, l.kernel, l.kernel})
            : detail::glorot(Shape{l.out_ch, l.in_ch, l.kernel, l.kernel},
                             fan_in, fan_out, rng);
    params.emplace(l.name + ".w", std::move(w));
    params.emplace(l.name + ".b", Tensor<float>(Shape{l.out_ch}));
  }
  return params;
}

// --- inputs ---------------------------------------------------------------

// Per-pathway network input stacks for one output patch. pathways[r] has
// shape [D, 4K, n_r, n_r]: RGBA of all K sources concatenated channelwise in
// source order, one slab per sweep plane.
template <typename T>
struct PatchInputs {
  std::vector<Tensor<T>> pathways;
};

inline Rect centered_rect(const Rect& out_region, int extent_w, int extent_h) {
  return Rect{out_region.x + (out_region.width - extent_w) / 2,
              out_region.y + (out_region.height - extent_h) / 2, extent_w,
              extent_h};
}

// Context rectangle (absolute target pixel coordinates) read by pathway r
// when producing `out_region`.
inline Rect pathway_context(const TowerConfig& cfg, const Rect& out_region,
                            int r) {
  const int ew = cfg.pathway_input_size(r, out_region.width) << r;
  const int eh = cfg.pathway_input_size(r, out_region.height) << r;
  return centered_rect(out_region, ew, eh);
}

// Builds the per-pathway input stacks from full-resolution plane sweep
// volumes. Each pathway crops its 2^r-scaled context window and box-filters
// it down to working size; data missing at the source (outside its field of
// view) is already alpha 0 in the volumes, so padding stays in-band.
template <typename T = float>
PatchInputs<T> multires_preprocess(const std::vector<PlaneSweepVolume>& psvs,
                                   const Rect& out_region,
                                   const TowerConfig& cfg) {
  if (static_cast<int>(psvs.size()) != cfg.source_count)
    throw std::invalid_argument("multires_preprocess: expected " +
                                std::to_string(cfg.source_count) + " volumes");
  cfg.check_output_size(out_region.width);
  cfg.check_output_size(out_region.height);
  const int d = cfg.depth_planes;
  for (const auto& vol : psvs)
    if (static_cast<int>(vol.planes.size()) != d)
      throw std::invalid_argument("multires_preprocess: plane count mismatch");

  PatchInputs<T> in;
  in.pathways.reserve(cfg.resolutions);
  for (int r = 0; r < cfg.resolutions; ++r) {
    const Rect ctx = pathway_context(cfg, out_region, r);
    const int nw = ctx.width >> r;
    const int nh = ctx.height >> r;
    Tensor<T> stack(Shape{d, cfg.input_channels(), nh, nw});
    for (int k = 0; k < cfg.source_count; ++k) {
      const auto& vol = psvs[k];
      const Rect local{ctx.x - vol.region.x, ctx.y - vol.region.y, ctx.width,
                       ctx.height};
      for (int z = 0; z < d; ++z) {
        const RgbaImage scaled = downsample_box(crop(vol.planes[z], local), 1 << r);
        for (int c = 0; c < 4; ++c) {
          T* dst = stack.data() +
                   ((static_cast<std::int64_t>(z) * cfg.input_channels() + 4 * k + c) * nh) * nw;
          const float* src = scaled.px.data() + c;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(nh) * nw; ++i)
            dst[i] = static_cast<T>(src[4 * i]);
        }
      }
    }
    in.pathways.push_back(std::move(stack));
  }
  return in;
}

// --- forward --------------------------------------------------------------

template <typename T>
struct ForwardNodes {
  typename Graph<T>::NodeId output;     // [3, H, W]
  typename Graph<T>::NodeId selection;  // [D, H, W]
  typename Graph<T>::NodeId color;      // [D, 3, H, W]
};

namespace detail {

template <typename T>
using NodeIds = std::map<std::string, typename Graph<T>::NodeId>;

template <typename T>
typename Graph<T>::NodeId conv_block(Graph<T>& g, typename Graph<T>::NodeId x,
                                     const NodeIds<T>& p, const std::string& name,
                                     bool activate) {
  auto y = g.conv2d(x, p.at(name + ".w"), p.at(name + ".b"));
  return activate ? g.relu(y) : y;
}

// Shared two-stage trunk: per-pathway convs on every plane (weights shared
// across planes via the batched conv), nearest-neighbor upsample, channel
// concat, post-merge convs. Returns [D, C_f, H, W].
template <typename T>
typename Graph<T>::NodeId tower_trunk(Graph<T>& g, const PatchInputs<T>& in,
                                      const NodeIds<T>& p, const TowerConfig& cfg,
                                      const std::string& tower) {
  std::vector<typename Graph<T>::NodeId> merged;
  for (int r = 0; r < cfg.resolutions; ++r) {
    auto h = g.constant(in.pathways[r]);
    for (std::size_t i = 0; i < cfg.per_plane.size(); ++i)
      h = conv_block(g, h, p, tower + ".p" + std::to_string(r) + ".c" + std::to_string(i), true);
    if (r > 0) h = g.upsample_nearest(h, 1 << r);
    merged.push_back(h);
  }
  auto m = merged.size() == 1 ? merged[0] : g.concat(merged, 1);
  for (std::size_t i = 0; i < cfg.post_merge.size(); ++i)
    m = conv_block(g, m, p, tower + ".m.c" + std::to_string(i), true);
  return m;
}

}  // namespace detail

// Assembles the complete two-tower forward pass in `g`. Inputs come per
// pathway as [D, 4K, n, n] stacks; parameters are pre-registered nodes (use
// register_parameters for training, register_constants for inference).
template <typename T>
ForwardNodes<T> build_forward(Graph<T>& g, const PatchInputs<T>& in,
                              const detail::NodeIds<T>& p,
                              const TowerConfig& cfg) {
  if (static_cast<int>(in.pathways.size()) != cfg.resolutions)
    throw std::invalid_argument("build_forward: pathway count mismatch");
  for (int r = 0; r < cfg.resolutions; ++r) {
    const auto& s = in.pathways[r].shape();
    if (in.pathways[r].rank() != 4 || s[0] != cfg.depth_planes ||
        s[1] != cfg.input_channels())
      throw std::invalid_argument("build_forward: pathway " + std::to_string(r) +
                                  " has shape " + shape_str(s));
  }
  const int d = cfg.depth_planes;

  // Selection tower: trunk, then per-pixel cross-depth layers over the
  // depth-concatenated features, tanh on the depth logits, softmax over depth.
  auto sel_feat = detail::tower_trunk(g, in, p, cfg, "sel");
  const auto& fs = g.value(sel_feat).shape();
  const int oh = fs[2], ow = fs[3];
  auto x = g.reshape(sel_feat, Shape{d * cfg.feature_channels(), oh, ow});
  for (std::size_t i = 0; i < cfg.cross_depth.size(); ++i)
    x = detail::conv_block(g, x, p, "sel.d.c" + std::to_string(i), true);
  x = detail::conv_block(g, x, p,
                         "sel.d.c" + std::to_string(cfg.cross_depth.size()),
                         false);
  auto selection = g.softmax_over_axis(g.tanh_act(x), 0);  // [D, H, W]

  // Color tower: trunk then a linear per-plane reconstruction layer; no
  // cross-depth interaction.
  auto col_feat = detail::tower_trunk(g, in, p, cfg, "col");
  auto color = detail::conv_block(g, col_feat, p, "col.out", false);  // [D,3,H,W]

  // Weighted summation over the color planes.
  auto weights = g.reshape(selection, Shape{d, 1, oh, ow});
  auto output = g.sum_over_axis(g.eltwise_mul(weights, color), 0);  // [3,H,W]
  return {output, selection, color};
}

template <typename T>
detail::NodeIds<T> register_parameters(Graph<T>& g, const ParamMap<T>& params) {
  detail::NodeIds<T> ids;
  for (const auto& [name, t] : params) ids[name] = g.parameter(name, t);
  return ids;
}

template <typename T>
detail::NodeIds<T> register_constants(Graph<T>& g, const ParamMap<T>& params) {
  detail::NodeIds<T> ids;
  for (const auto& [name, t] : params) ids[name] = g.constant(t);
  return ids;
}

template <typename T>
struct ForwardResult {
  Tensor<T> image;      // [3, H, W]
  Tensor<T> selection;  // [D, H, W], sums to 1 over depth per pixel
  Tensor<T> color;      // [D, 3, H, W]
};

// Inference-only forward pass.
template <typename T>
ForwardResult<T> forward(const PatchInputs<T>& in, const ParamMap<T>& params,
                         const TowerConfig& cfg) {
  Graph<T> g;
  const auto ids = register_constants(g, params);
  const auto nodes = build_forward(g, in, ids, cfg);
  return {g.value(nodes.output), g.value(nodes.selection), g.value(nodes.color)};
}

template <typename T>
Tensor<T> selection_tower(const PatchInputs<T>& in, const ParamMap<T>& params,
                          const TowerConfig& cfg) {
  return forward(in, params, cfg).selection;
}

template <typename T>
Tensor<T> color_tower(const PatchInputs<T>& in, const ParamMap<T>& params,
                      const TowerConfig& cfg) {
  return forward(in, params, cfg).color;
}

// Per-pixel convex combination of plane colors weighted by the selection
// map; the plane sum runs in ascending z exactly like the graph op pair
// (eltwise_mul then sum_over_axis), so both paths agree bitwise.
template <typename T>
Tensor<T> combine(const Tensor<T>& selection, const Tensor<T>& color) {
  if (selection.rank() != 3 || color.rank() != 4 ||
      selection.dim(0) != color.dim(0) || color.dim(1) != 3 ||
      selection.dim(1) != color.dim(2) || selection.dim(2) != color.dim(3))
    throw std::invalid_argument("combine: selection " + shape_str(selection.shape()) +
                                " vs color " + shape_str(color.shape()));
  const int d = color.dim(0), h = color.dim(2), w = color.dim(3);
  Tensor<T> out(Shape{3, h, w});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int z = 0; z < d; ++z)
    for (int c = 0; c < 3; ++c) {
      const T* sv = selection.data() + z * hw;
      const T* cv = color.data() + (static_cast<std::int64_t>(z) * 3 + c) * hw;
      T* ov = out.data() + c * hw;
      for (std::int64_t i = 0; i < hw; ++i) ov[i] += sv[i] * cv[i];
    }
  return out;
}

}  // namespace viewsynth
