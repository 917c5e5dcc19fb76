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

#include <nlohmann/json.hpp>

#include "viewsynth/geometry.hpp"
#include "viewsynth/image.hpp"
#include "viewsynth/png_io.hpp"

namespace viewsynth {

// One posed scene loaded into memory: images, cameras, and (when present)
// ground-truth depth rasters.
struct SceneData {
  std::string dir;
  std::string scene_id;
  std::vector<RgbaImage> images;
  std::vector<Camera> cameras;
  std::vector<DepthRaster> depths;  // empty when the dataset carries none
  std::vector<double> layer_depths;
  std::vector<int> eval_views;  // views reserved for evaluation
  nlohmann::json manifest;

  int view_count() const { return static_cast<int>(images.size()); }

  bool is_eval_view(int v) const {
    for (int e : eval_views)
      if (e == v) return true;
    return false;
  }
};

inline SceneData load_scene(const std::string& dir) {
  SceneData scene;
  scene.dir = dir;
  const std::string manifest_path = dir + "/manifest.json";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + manifest_path);
  in >> scene.manifest;

  scene.scene_id = scene.manifest.value("scene_id", dir);
  scene.cameras =
      load_cameras(dir + "/" + scene.manifest.at("cameras").get<std::string>());
  if (scene.manifest.contains("layer_depths"))
    scene.manifest.at("layer_depths").get_to(scene.layer_depths);
  if (scene.manifest.contains("eval_views"))
    scene.manifest.at("eval_views").get_to(scene.eval_views);

  for (const auto& view : scene.manifest.at("views")) {
    scene.images.push_back(
        read_png(dir + "/" + view.at("image").get<std::string>()));
    if (view.contains("depth")) {
      const std::string depth_path = dir + "/" + view.at("depth").get<std::string>();
      if (std::filesystem::exists(depth_path))
        scene.depths.push_back(read_depth_raster(depth_path));
    }
  }
  if (scene.images.size() != scene.cameras.size())
    throw std::runtime_error(dir + ": view/camera count mismatch");
  if (!scene.depths.empty() && scene.depths.size() != scene.images.size())
    throw std::runtime_error(dir + ": partial depth rasters");
  return scene;
}

inline std::vector<SceneData> load_scenes(const std::vector<std::string>& dirs) {
  std::vector<SceneData> scenes;
  scenes.reserve(dirs.size());
  for (const auto& d : dirs) scenes.push_back(load_scene(d));
  return scenes;
}

}  // namespace viewsynth
