#pragma once

#include <Eigen/Geometry>

#include "viewsynth/geometry.hpp"
#include "viewsynth/image.hpp"
#include "viewsynth/rng.hpp"
#include "viewsynth/tensor.hpp"

namespace testutil {

using namespace viewsynth;

inline Camera identity_camera(int width = 64, int height = 64) {
  Camera cam;
  cam.intrinsics = {1, 1, 0, 0, width, height};
  return cam;
}

inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.uniform(-1, 1), rng.uniform(-1, 1),
                       rng.uniform(-1, 1), rng.uniform(-1, 1));
  while (q.norm() < 1e-3)
    q = Eigen::Quaterniond(rng.uniform(-1, 1), rng.uniform(-1, 1),
                           rng.uniform(-1, 1), rng.uniform(-1, 1));
  return q.normalized().toRotationMatrix();
}

inline Camera random_camera(Rng& rng, int size = 64) {
  Camera cam;
  cam.intrinsics.fx = rng.uniform(60, 200);
  cam.intrinsics.fy = rng.uniform(60, 200);
  cam.intrinsics.cx = rng.uniform(10, size - 10);
  cam.intrinsics.cy = rng.uniform(10, size - 10);
  cam.intrinsics.width = size;
  cam.intrinsics.height = size;
  cam.pose.rotation = random_rotation(rng);
  cam.pose.translation =
      Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  return cam;
}

// Pair of cameras with similar orientations, the way sweep sources sit
// relative to a target.
inline std::pair<Camera, Camera> camera_pair(Rng& rng) {
  Camera target;
  target.intrinsics.fx = rng.uniform(80, 160);
  target.intrinsics.fy = rng.uniform(80, 160);
  target.intrinsics.cx = rng.uniform(20, 44);
  target.intrinsics.cy = rng.uniform(20, 44);
  target.intrinsics.width = 64;
  target.intrinsics.height = 64;
  const Eigen::AngleAxisd jitter_t(
      rng.uniform(-0.15, 0.15),
      Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized());
  target.pose.rotation = jitter_t.toRotationMatrix();
  target.pose.translation =
      Vec3(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3));

  Camera source = target;
  const Eigen::AngleAxisd jitter_s(
      rng.uniform(-0.15, 0.15),
      Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized());
  source.pose.rotation = jitter_s.toRotationMatrix() * target.pose.rotation;
  source.pose.translation =
      target.pose.translation + Vec3(rng.uniform(-0.4, 0.4),
                                     rng.uniform(-0.4, 0.4),
                                     rng.uniform(-0.2, 0.2));
  return {source, target};
}

inline RgbaImage random_image(Rng& rng, int w, int h, bool random_alpha = false) {
  RgbaImage img(w, h);
  for (std::size_t i = 0; i < img.px.size(); i += 4) {
    img.px[i] = static_cast<float>(rng.uniform());
    img.px[i + 1] = static_cast<float>(rng.uniform());
    img.px[i + 2] = static_cast<float>(rng.uniform());
    img.px[i + 3] = random_alpha && rng.uniform() < 0.3 ? 0.f : 1.f;
  }
  return img;
}

template <typename T>
inline Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1,
                               double hi = 1) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace testutil
