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

#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "viewsynth/geometry.hpp"
#include "viewsynth/image.hpp"
#include "viewsynth/png_io.hpp"
#include "viewsynth/rng.hpp"

namespace viewsynth {

// Deterministic synthetic scenes: textured planes at fixed world depths,
// rasterized analytically. Every geometric oracle in the test suite leans on
// these being exact.

struct TextureSpec {
  enum class Type { kFlat, kCheckerboard, kValueNoise };
  Type type = Type::kFlat;
  std::array<float, 3> color{0.5f, 0.5f, 0.5f};

  // checkerboard
  double cell = 0.25;  // world units
  std::array<float, 3> color2{0.1f, 0.1f, 0.1f};

  // value noise
  int octaves = 3;
  std::uint64_t seed = 0;
  double scale = 0.2;      // world units per base lattice cell
  double contrast = 0.8;   // peak-to-peak amplitude around 0.5
};

struct SceneLayer {
  double depth = 1;                      // world z of the plane
  double x0 = -1e9, x1 = 1e9;            // extent on the plane, world units
  double y0 = -1e9, y1 = 1e9;
  TextureSpec texture;
};

struct SceneSpec {
  std::vector<SceneLayer> layers;
  std::array<float, 3> background{0.f, 0.f, 0.f};

  void validate() const {
    for (const auto& l : layers)
      if (!(l.depth > 0))
        throw std::invalid_argument("scene layer depth must be positive");
    for (std::size_t i = 0; i < layers.size(); ++i)
      for (std::size_t j = i + 1; j < layers.size(); ++j)
        if (layers[i].depth == layers[j].depth)
          throw std::invalid_argument("scene layer depths must be distinct");
  }
};

// Cameras on a jittered linear track along x, all looking down +z with
// identity rotation; scene planes are fronto-parallel to every view.
struct RigSpec {
  Intrinsics intrinsics;
  int count = 6;
  double spacing = 0.1;   // world units between neighboring views
  double jitter = 0.0;    // uniform +-jitter added per axis
  std::uint64_t seed = 0;
};

inline std::vector<Camera> make_rig(const RigSpec& rig) {
  if (rig.count < 1) throw std::invalid_argument("rig needs >= 1 view");
  rig.intrinsics.validate();
  Rng rng(rig.seed);
  std::vector<Camera> cams;
  cams.reserve(rig.count);
  for (int i = 0; i < rig.count; ++i) {
    const double base_x = (i - (rig.count - 1) / 2.0) * rig.spacing;
    Vec3 center(base_x + rng.uniform(-rig.jitter, rig.jitter),
                rng.uniform(-rig.jitter, rig.jitter),
                rng.uniform(-rig.jitter, rig.jitter));
    Camera cam;
    cam.intrinsics = rig.intrinsics;
    cam.pose.rotation = Mat3::Identity();
    cam.pose.translation = -center;  // world-to-camera with R = I
    cams.push_back(cam);
  }
  return cams;
}

namespace detail {

inline double smoothstep(double t) { return t * t * (3 - 2 * t); }

inline double noise_lattice(double x, double y, std::uint64_t seed,
                            std::uint64_t octave) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto ix = static_cast<std::uint64_t>(static_cast<std::int64_t>(fx));
  const auto iy = static_cast<std::uint64_t>(static_cast<std::int64_t>(fy));
  const double tx = smoothstep(x - fx);
  const double ty = smoothstep(y - fy);
  const double v00 = hash_unit({seed, octave, ix, iy});
  const double v10 = hash_unit({seed, octave, ix + 1, iy});
  const double v01 = hash_unit({seed, octave, ix, iy + 1});
  const double v11 = hash_unit({seed, octave, ix + 1, iy + 1});
  const double a = v00 + (v10 - v00) * tx;
  const double b = v01 + (v11 - v01) * tx;
  return a + (b - a) * ty;
}

inline double value_noise(double x, double y, int octaves, std::uint64_t seed) {
  double sum = 0, norm = 0, amp = 1, freq = 1;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * noise_lattice(x * freq, y * freq, seed, static_cast<std::uint64_t>(o));
    norm += amp;
    amp *= 0.5;
    freq *= 2;
  }
  return sum / norm;
}

}  // namespace detail

// Texture color at a world-plane point.
inline std::array<float, 3> texture_color(const TextureSpec& tex, double x,
                                          double y) {
  switch (tex.type) {
    case TextureSpec::Type::kFlat:
      return tex.color;
    case TextureSpec::Type::kCheckerboard: {
      const auto cx = static_cast<std::int64_t>(std::floor(x / tex.cell));
      const auto cy = static_cast<std::int64_t>(std::floor(y / tex.cell));
      return ((cx + cy) & 1) == 0 ? tex.color : tex.color2;
    }
    case TextureSpec::Type::kValueNoise: {
      std::array<float, 3> out{};
      for (int c = 0; c < 3; ++c) {
        const double v = detail::value_noise(
            x / tex.scale, y / tex.scale, tex.octaves,
            tex.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(c + 1));
        out[c] = static_cast<float>(
            std::clamp(0.5 + (v - 0.5) * tex.contrast, 0.0, 1.0));
      }
      return out;
    }
  }
  return tex.color;
}

// Analytic rasterization: per pixel, cast the ray, take the nearest layer hit
// within its extent. Pixels that miss every layer get the background color
// and +infinity depth.
inline std::pair<RgbaImage, DepthRaster> render_view(const SceneSpec& scene,
                                                     const Camera& cam) {
  scene.validate();
  cam.validate();
  const int w = cam.intrinsics.width;
  const int h = cam.intrinsics.height;
  RgbaImage img(w, h);
  DepthRaster depth(w, h);
  const Vec3 center = cam.center();
  const Mat3 ray_rot = cam.pose.rotation.transpose() * cam.intrinsics.inverse_matrix();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // dir has camera-frame z == 1, so the ray parameter is camera depth.
      const Vec3 dir = ray_rot * Vec3(x, y, 1);
      double best = std::numeric_limits<double>::infinity();
      const SceneLayer* hit = nullptr;
      double hx = 0, hy = 0;
      for (const auto& layer : scene.layers) {
        if (dir.z() == 0) continue;
        const double s = (layer.depth - center.z()) / dir.z();
        if (!(s > 0) || s >= best) continue;
        const double px = center.x() + s * dir.x();
        const double py = center.y() + s * dir.y();
        if (px < layer.x0 || px > layer.x1 || py < layer.y0 || py > layer.y1)
          continue;
        best = s;
        hit = &layer;
        hx = px;
        hy = py;
      }
      float* p = img.at(x, y);
      if (hit) {
        const auto c = texture_color(hit->texture, hx, hy);
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
      } else {
        p[0] = scene.background[0];
        p[1] = scene.background[1];
        p[2] = scene.background[2];
      }
      p[3] = 1.f;
      depth.at(x, y) = static_cast<float>(best);
    }
  }
  return {std::move(img), std::move(depth)};
}

// --- JSON ------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const TextureSpec& t) {
  switch (t.type) {
    case TextureSpec::Type::kFlat:
      j = {{"type", "flat"}, {"color", t.color}};
      break;
    case TextureSpec::Type::kCheckerboard:
      j = {{"type", "checkerboard"}, {"color", t.color}, {"color2", t.color2},
           {"cell", t.cell}};
      break;
    case TextureSpec::Type::kValueNoise:
      j = {{"type", "value_noise"}, {"octaves", t.octaves}, {"seed", t.seed},
           {"scale", t.scale}, {"contrast", t.contrast}};
      break;
  }
}

inline void from_json(const nlohmann::json& j, TextureSpec& t) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "flat") {
    t.type = TextureSpec::Type::kFlat;
    j.at("color").get_to(t.color);
  } else if (type == "checkerboard") {
    t.type = TextureSpec::Type::kCheckerboard;
    j.at("color").get_to(t.color);
    j.at("color2").get_to(t.color2);
    j.at("cell").get_to(t.cell);
  } else if (type == "value_noise") {
    t.type = TextureSpec::Type::kValueNoise;
    j.at("octaves").get_to(t.octaves);
    j.at("seed").get_to(t.seed);
    j.at("scale").get_to(t.scale);
    j.at("contrast").get_to(t.contrast);
  } else {
    throw std::invalid_argument("unknown texture type: " + type);
  }
}

inline void to_json(nlohmann::json& j, const SceneLayer& l) {
  j = {{"depth", l.depth}, {"x0", l.x0}, {"x1", l.x1}, {"y0", l.y0},
       {"y1", l.y1}, {"texture", l.texture}};
}
inline void from_json(const nlohmann::json& j, SceneLayer& l) {
  j.at("depth").get_to(l.depth);
  j.at("x0").get_to(l.x0);
  j.at("x1").get_to(l.x1);
  j.at("y0").get_to(l.y0);
  j.at("y1").get_to(l.y1);
  j.at("texture").get_to(l.texture);
}

inline void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = {{"layers", s.layers}, {"background", s.background}};
}
inline void from_json(const nlohmann::json& j, SceneSpec& s) {
  j.at("layers").get_to(s.layers);
  j.at("background").get_to(s.background);
}

inline void to_json(nlohmann::json& j, const RigSpec& r) {
  j = {{"fx", r.intrinsics.fx},     {"fy", r.intrinsics.fy},
       {"cx", r.intrinsics.cx},     {"cy", r.intrinsics.cy},
       {"width", r.intrinsics.width}, {"height", r.intrinsics.height},
       {"count", r.count},          {"spacing", r.spacing},
       {"jitter", r.jitter},        {"seed", r.seed}};
}
inline void from_json(const nlohmann::json& j, RigSpec& r) {
  j.at("fx").get_to(r.intrinsics.fx);
  j.at("fy").get_to(r.intrinsics.fy);
  j.at("cx").get_to(r.intrinsics.cx);
  j.at("cy").get_to(r.intrinsics.cy);
  j.at("width").get_to(r.intrinsics.width);
  j.at("height").get_to(r.intrinsics.height);
  j.at("count").get_to(r.count);
  j.at("spacing").get_to(r.spacing);
  j.at("jitter").get_to(r.jitter);
  j.at("seed").get_to(r.seed);
}

// --- on-disk dataset --------------------------------------------------------

// Renders every rig pose and writes PNGs, depth rasters, the camera file and
// a manifest embedding the full scene and rig specs, so any view can be
// re-rendered bit-identically from the manifest alone.
inline std::string make_dataset(const SceneSpec& scene, const RigSpec& rig,
                                const std::string& out_dir,
                                const std::string& scene_id,
                                const std::vector<int>& eval_views = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::vector<Camera> cams = make_rig(rig);

  nlohmann::json views = nlohmann::json::array();
  for (std::size_t i = 0; i < cams.size(); ++i) {
    char image_name[32], depth_name[32];
    std::snprintf(image_name, sizeof image_name, "view_%03zu.png", i);
    std::snprintf(depth_name, sizeof depth_name, "view_%03zu.dswd", i);
    auto [img, depth] = render_view(scene, cams[i]);
    write_png(out_dir + "/" + image_name, img);
    write_depth_raster(out_dir + "/" + depth_name, depth);
    views.push_back({{"image", image_name}, {"depth", depth_name}});
  }
  save_cameras(out_dir + "/cameras.jsonl", cams);

  std::vector<double> layer_depths;
  for (const auto& l : scene.layers) layer_depths.push_back(l.depth);

  nlohmann::json manifest = {
      {"scene_id", scene_id},
      {"cameras", "cameras.jsonl"},
      {"views", views},
      {"layer_depths", layer_depths},
      {"eval_views", eval_views},
      {"seeds", {{"rig", rig.seed}}},
      {"scene_spec", scene},
      {"rig_spec", rig},
  };
  const std::string manifest_path = out_dir + "/manifest.json";
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + manifest_path);
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("short write to " + manifest_path);
  return manifest_path;
}

}  // namespace viewsynth
