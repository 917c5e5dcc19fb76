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

#include <Eigen/Dense>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace viewsynth {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Pixel convention used throughout: pixel centers sit at integer coordinates
// and (0,0) is the center of the top-left pixel.
struct Intrinsics {
  double fx = 1, fy = 1;
  double cx = 0, cy = 0;
  int width = 1, height = 1;

  void validate() const {
    if (!(fx > 0) || !(fy > 0))
      throw std::invalid_argument("focal lengths must be positive");
    if (width < 1 || height < 1)
      throw std::invalid_argument("image size must be at least 1x1");
  }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  Mat3 inverse_matrix() const {
    Mat3 k;
    k << 1 / fx, 0, -cx / fx, 0, 1 / fy, -cy / fy, 0, 0, 1;
    return k;
  }
};

// World-to-camera rigid transform: x_cam = rotation * x_world + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  void validate(double tol = 1e-6) const {
    const Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
    if (err.cwiseAbs().maxCoeff() > tol)
      throw std::invalid_argument("rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > tol)
      throw std::invalid_argument("rotation determinant is not +1");
  }
};

struct Camera {
  Intrinsics intrinsics;
  Pose pose;

  void validate() const {
    intrinsics.validate();
    pose.validate();
  }

  Vec3 to_camera(const Vec3& p_world) const {
    return pose.rotation * p_world + pose.translation;
  }
  Vec3 to_world(const Vec3& p_cam) const {
    return pose.rotation.transpose() * (p_cam - pose.translation);
  }
  Vec3 center() const {
    return -(pose.rotation.transpose() * pose.translation);
  }
};

struct PixelDepth {
  Vec2 pixel;
  double depth;
};

// Projects a world point; empty when the point lies at or behind the camera.
inline std::optional<PixelDepth> project(const Camera& cam, const Vec3& point) {
  const Vec3 p = cam.to_camera(point);
  if (!(p.z() > 0)) return std::nullopt;
  const Intrinsics& in = cam.intrinsics;
  return PixelDepth{Vec2(in.fx * p.x() / p.z() + in.cx,
                         in.fy * p.y() / p.z() + in.cy),
                    p.z()};
}

inline Vec3 unproject(const Camera& cam, const Vec2& pixel, double depth) {
  if (!(depth > 0)) throw std::invalid_argument("unproject: depth must be > 0");
  const Intrinsics& in = cam.intrinsics;
  const Vec3 p_cam((pixel.x() - in.cx) / in.fx * depth,
                   (pixel.y() - in.cy) / in.fy * depth, depth);
  return cam.to_world(p_cam);
}

struct PlaneHomography {
  Mat3 matrix = Mat3::Identity();
  // Set when the sweep plane passes through the source camera center; the
  // mapping collapses to a line and samples are meaningless.
  bool degenerate = false;
};

// Homography taking target pixel coordinates to source pixel coordinates for
// the plane fronto-parallel to the target camera at target-frame depth
// `depth`. The third homogeneous output coordinate equals the source-frame
// depth of the mapped point, so callers can reject points behind the source.
inline PlaneHomography plane_homography(const Camera& source,
                                        const Camera& target, double depth) {
  if (!(depth > 0))
    throw std::invalid_argument("plane_homography: depth must be > 0");
  const Mat3 r_rel = source.pose.rotation * target.pose.rotation.transpose();
  const Vec3 t_rel = source.pose.translation - r_rel * target.pose.translation;

  Mat3 mid = depth * r_rel;
  mid.col(2) += t_rel;  // t_rel * e3^T folded into the last column
  PlaneHomography h;
  h.matrix = source.intrinsics.matrix() * mid * target.intrinsics.inverse_matrix();

  // Source center expressed in the target frame; the plane z = depth is
  // degenerate when it contains that center.
  const Vec3 c_src_in_target = target.to_camera(source.center());
  h.degenerate =
      std::abs(c_src_in_target.z() - depth) <= 1e-9 * std::max(1.0, depth);
  return h;
}

// --- Camera file I/O -------------------------------------------------------
//
// UTF-8 text, one JSON object per line, keys: fx fy cx cy width height
// rotation (9 numbers, row-major, world-to-camera) translation (3 numbers).

inline nlohmann::json camera_to_json(const Camera& cam) {
  nlohmann::json j;
  j["fx"] = cam.intrinsics.fx;
  j["fy"] = cam.intrinsics.fy;
  j["cx"] = cam.intrinsics.cx;
  j["cy"] = cam.intrinsics.cy;
  j["width"] = cam.intrinsics.width;
  j["height"] = cam.intrinsics.height;
  std::vector<double> rot(9), tr(3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[r * 3 + c] = cam.pose.rotation(r, c);
  for (int i = 0; i < 3; ++i) tr[i] = cam.pose.translation(i);
  j["rotation"] = rot;
  j["translation"] = tr;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera cam;
  cam.intrinsics.fx = j.at("fx").get<double>();
  cam.intrinsics.fy = j.at("fy").get<double>();
  cam.intrinsics.cx = j.at("cx").get<double>();
  cam.intrinsics.cy = j.at("cy").get<double>();
  cam.intrinsics.width = j.at("width").get<int>();
  cam.intrinsics.height = j.at("height").get<int>();
  const auto rot = j.at("rotation").get<std::vector<double>>();
  const auto tr = j.at("translation").get<std::vector<double>>();
  if (rot.size() != 9 || tr.size() != 3)
    throw std::invalid_argument("camera json: rotation/translation size");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.pose.rotation(r, c) = rot[r * 3 + c];
  for (int i = 0; i < 3; ++i) cam.pose.translation(i) = tr[i];
  cam.validate();
  return cam;
}

inline void save_cameras(const std::string& path,
                         const std::vector<Camera>& cams) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const Camera& c : cams) out << camera_to_json(c).dump() << "\n";
}

inline std::vector<Camera> load_cameras(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<Camera> cams;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    cams.push_back(camera_from_json(nlohmann::json::parse(line)));
  }
  return cams;
}

}  // namespace viewsynth
