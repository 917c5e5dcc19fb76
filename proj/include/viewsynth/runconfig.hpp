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

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "viewsynth/network.hpp"
#include "viewsynth/psv.hpp"
#include "viewsynth/synthdata.hpp"
#include "viewsynth/training.hpp"

namespace viewsynth {

inline void to_json(nlohmann::json& j, const DepthSampling& s) {
  j = {{"d_min", s.d_min},
       {"d_max", s.d_max},
       {"count", s.count},
       {"scheme", s.scheme == DepthScheme::kInverseUniform ? "inverse_depth"
                                                           : "uniform"}};
}
inline void from_json(const nlohmann::json& j, DepthSampling& s) {
  j.at("d_min").get_to(s.d_min);
  j.at("d_max").get_to(s.d_max);
  j.at("count").get_to(s.count);
  const std::string scheme = j.at("scheme").get<std::string>();
  if (scheme == "inverse_depth")
    s.scheme = DepthScheme::kInverseUniform;
  else if (scheme == "uniform")
    s.scheme = DepthScheme::kUniform;
  else
    throw std::invalid_argument("unknown depth scheme: " + scheme);
}

inline void to_json(nlohmann::json& j, const SamplePolicy& p) {
  j = {{"source_count", p.source_count},
       {"max_baseline", p.max_baseline},
       {"exclude_eval_targets", p.exclude_eval_targets}};
}
inline void from_json(const nlohmann::json& j, SamplePolicy& p) {
  j.at("source_count").get_to(p.source_count);
  j.at("max_baseline").get_to(p.max_baseline);
  j.at("exclude_eval_targets").get_to(p.exclude_eval_targets);
}

// Full default configuration: a desk-scale three-layer noise-textured scene
// set with the single-pathway tower. Every subcommand starts from this, deep-
// merges an optional --config file, then applies flag overrides, and persists
// the resolved result next to its outputs.
inline nlohmann::json default_run_config() {
  TowerConfig arch = TowerConfig::desk_default();

  DepthSampling sampling;
  sampling.d_min = 1.9;
  sampling.d_max = 4.8;
  sampling.count = 16;
  sampling.scheme = DepthScheme::kInverseUniform;

  SamplePolicy policy;
  policy.source_count = 5;
  policy.max_baseline = 0.45;
  policy.exclude_eval_targets = true;

  SceneSpec scene;
  {
    SceneLayer far_layer;
    far_layer.depth = 4.2;
    far_layer.x0 = -2.2;
    far_layer.x1 = 2.2;
    far_layer.y0 = -2.2;
    far_layer.y1 = 2.2;
    far_layer.texture.type = TextureSpec::Type::kValueNoise;
    far_layer.texture.octaves = 3;
    far_layer.texture.scale = 0.22;
    far_layer.texture.contrast = 0.9;
    far_layer.texture.seed = 11;

    SceneLayer mid_layer;
    mid_layer.depth = 3.0;
    mid_layer.x0 = -1.0;
    mid_layer.x1 = 0.05;
    mid_layer.y0 = -0.95;
    mid_layer.y1 = 0.8;
    mid_layer.texture = far_layer.texture;
    mid_layer.texture.scale = 0.16;
    mid_layer.texture.seed = 12;

    SceneLayer near_layer;
    near_layer.depth = 2.1;
    near_layer.x0 = 0.02;
    near_layer.x1 = 0.6;
    near_layer.y0 = -0.3;
    near_layer.y1 = 0.42;
    near_layer.texture = far_layer.texture;
    near_layer.texture.scale = 0.12;
    near_layer.texture.seed = 13;

    scene.layers = {near_layer, mid_layer, far_layer};
    scene.background = {0.f, 0.f, 0.f};
  }

  RigSpec rig;
  rig.intrinsics.fx = 160;
  rig.intrinsics.fy = 160;
  rig.intrinsics.cx = 47.5;
  rig.intrinsics.cy = 47.5;
  rig.intrinsics.width = 96;
  rig.intrinsics.height = 96;
  rig.count = 13;
  rig.spacing = 0.08;
  rig.jitter = 0.01;
  rig.seed = 0;  // per-scene seeds derive from the run seed

  nlohmann::json j;
  j["seed"] = 1;
  j["out"] = "out";
  j["dataset"] = nlohmann::json::array();
  j["arch"] = arch;
  j["depth_sampling"] = sampling;
  j["policy"] = policy;
  j["training"] = {{"batch", 32},
                   {"steps", 3000},
                   {"lr", 0.0005},
                   {"eps", 1e-8},
                   {"threads", 0},
                   {"checkpoint_every", 0},
                   {"eval_every", 0},
                   {"stop_psnr", 0.0}};
  j["synth"] = {{"scenes", 4},
                {"eval_view", 6},
                {"scene", scene},
                {"rig", rig}};
  return j;
}

inline nlohmann::json load_run_config(const std::string& path) {
  nlohmann::json j = default_run_config();
  if (!path.empty()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read config " + path);
    nlohmann::json file;
    in >> file;
    j.merge_patch(file);
  }
  return j;
}

inline void save_run_config(const std::string& dir, const nlohmann::json& j) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir + "/runconfig.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + dir + "/runconfig.json");
  out << j.dump(2) << "\n";
}

inline TrainOptions train_options_from(const nlohmann::json& j) {
  const auto& t = j.at("training");
  TrainOptions opt;
  opt.batch = t.at("batch").get<int>();
  opt.steps = t.at("steps").get<std::uint64_t>();
  opt.lr = t.at("lr").get<double>();
  opt.eps = t.at("eps").get<double>();
  opt.seed = j.at("seed").get<std::uint64_t>();
  opt.threads = t.at("threads").get<int>();
  opt.checkpoint_every = t.at("checkpoint_every").get<std::uint64_t>();
  opt.eval_every = t.at("eval_every").get<std::uint64_t>();
  opt.stop_psnr = t.at("stop_psnr").get<double>();
  return opt;
}

// Derives per-scene specs from the synth section: scene i keeps the template
// geometry but re-seeds every noise texture and the rig jitter.
inline std::pair<SceneSpec, RigSpec> synth_scene(const nlohmann::json& j,
                                                 int scene_index) {
  SceneSpec scene = j.at("synth").at("scene").get<SceneSpec>();
  RigSpec rig = j.at("synth").at("rig").get<RigSpec>();
  const auto seed = j.at("seed").get<std::uint64_t>();
  Rng rng(seed ^ (0x5851f42d4c957f2dULL * static_cast<std::uint64_t>(scene_index + 1)));
  for (auto& layer : scene.layers)
    if (layer.texture.type == TextureSpec::Type::kValueNoise)
      layer.texture.seed = rng.next();
  rig.seed = rng.next();
  return {scene, rig};
}

}  // namespace viewsynth
