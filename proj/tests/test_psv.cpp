#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"
#include "viewsynth/psv.hpp"
#include "viewsynth/synthdata.hpp"

using namespace viewsynth;

TEST_CASE("depth sampling invariants") {
  DepthSampling bad;
  bad.d_min = 1;
  bad.d_max = 1;
  bad.count = 3;
  CHECK_THROWS_AS(depth_planes(bad), std::invalid_argument);
  bad.d_max = 2;
  bad.count = 1;
  CHECK_THROWS_AS(depth_planes(bad), std::invalid_argument);
}

TEST_CASE("depth_planes: inverse-depth spacing") {
  DepthSampling s{1.0, 3.0, 3, DepthScheme::kInverseUniform};
  const auto d = depth_planes(s);
  REQUIRE(d.size() == 3);
  CHECK(d[0] == 1.0);
  CHECK(d[1] == Catch::Approx(1.5).margin(1e-12));
  CHECK(d[2] == 3.0);
}

TEST_CASE("depth_planes: uniform spacing") {
  DepthSampling s{1.0, 3.0, 3, DepthScheme::kUniform};
  const auto d = depth_planes(s);
  CHECK(d[0] == 1.0);
  CHECK(d[1] == 2.0);
  CHECK(d[2] == 3.0);
}

TEST_CASE("depth_planes: strictly increasing, endpoints inclusive") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    DepthSampling s;
    s.d_min = rng.uniform(0.1, 2);
    s.d_max = s.d_min + rng.uniform(0.1, 8);
    s.count = 2 + static_cast<int>(rng.below(30));
    s.scheme = rng.uniform() < 0.5 ? DepthScheme::kInverseUniform
                                   : DepthScheme::kUniform;
    const auto d = depth_planes(s);
    CHECK(d.front() == s.d_min);
    CHECK(d.back() == s.d_max);
    for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i] > d[i - 1]);
  }
}

TEST_CASE("build_psv: source equal to target reproduces the crop at all depths") {
  Rng rng(2);
  const RgbaImage img = testutil::random_image(rng, 32, 32);
  Camera cam;
  cam.intrinsics = {40, 40, 16, 16, 32, 32};
  cam.pose.translation = Vec3(0.2, -0.1, 0.3);
  cam.pose.rotation = testutil::random_rotation(rng);

  DepthSampling s{0.5, 4.0, 5, DepthScheme::kInverseUniform};
  const Rect region{4, 6, 12, 10};
  const auto vols = build_psv({{&img, cam}}, cam, s, region);
  REQUIRE(vols.size() == 1);
  REQUIRE(vols[0].planes.size() == 5);
  const RgbaImage expected = crop(img, region);
  for (const auto& plane : vols[0].planes) CHECK(plane.px == expected.px);
}

TEST_CASE("build_psv: plane behind the source camera is all alpha 0") {
  Rng rng(3);
  const RgbaImage img = testutil::random_image(rng, 32, 32);
  Camera target;
  target.intrinsics = {40, 40, 16, 16, 32, 32};
  Camera source = target;
  source.pose.translation = Vec3(0, 0, -1.5);  // center at z = +1.5

  DepthSampling s{1.0, 4.0, 4, DepthScheme::kInverseUniform};
  const auto vols = build_psv({{&img, source}}, target, s, {0, 0, 32, 32});
  // Plane 1 (depth 1.0) lies behind the source camera center at z=1.5.
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) CHECK(vols[0].planes[0].at(x, y)[3] == 0.f);
  // The far plane is in front of it and visible.
  const auto& far_plane = vols[0].planes.back();
  double alpha_sum = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) alpha_sum += far_plane.at(x, y)[3];
  CHECK(alpha_sum > 0);
}

TEST_CASE("build_psv: region composability is exact") {
  Rng rng(4);
  const RgbaImage img = testutil::random_image(rng, 48, 48);
  Camera target;
  target.intrinsics = {50, 55, 24, 24, 48, 48};
  Camera source = target;
  source.pose.rotation = testutil::random_rotation(rng);
  // Keep the source looking roughly the same way so planes project validly.
  source.pose.rotation =
      (Eigen::AngleAxisd(0.1, Vec3(0, 1, 0)).toRotationMatrix());
  source.pose.translation = Vec3(-0.2, 0.05, 0.02);

  DepthSampling s{1.0, 5.0, 3, DepthScheme::kInverseUniform};
  const Rect left{2, 5, 10, 20};
  const Rect right{12, 5, 14, 20};
  const Rect whole{2, 5, 24, 20};
  const auto vol_left = build_psv({{&img, source}}, target, s, left)[0];
  const auto vol_right = build_psv({{&img, source}}, target, s, right)[0];
  const auto vol_whole = build_psv({{&img, source}}, target, s, whole)[0];

  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 24; ++x) {
        const float* got = vol_whole.planes[z].at(x, y);
        const float* expect = x < 10 ? vol_left.planes[z].at(x, y)
                                     : vol_right.planes[z].at(x - 10, y);
        for (int c = 0; c < 4; ++c) CHECK(got[c] == expect[c]);
      }
}

TEST_CASE("build_psv: alpha 1 when the source covers the target slab") {
  Rng rng(5);
  const RgbaImage img = testutil::random_image(rng, 128, 128);
  Camera target;
  target.intrinsics = {60, 60, 16, 16, 32, 32};
  Camera source;
  source.intrinsics = {60, 60, 64, 64, 128, 128};  // much wider field of view
  source.pose.translation = Vec3(0.05, -0.05, 0);

  DepthSampling s{1.5, 4.0, 4, DepthScheme::kInverseUniform};
  const auto vols = build_psv({{&img, source}}, target, s, {0, 0, 32, 32});
  for (const auto& plane : vols[0].planes)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) CHECK(plane.at(x, y)[3] == 1.f);
}

namespace {

// Single noise-textured plane with two identity-rotation cameras; shared by
// the photoconsistency and epipolar tests.
struct PlaneFixture {
  SceneSpec scene;
  Camera target, source;
  RgbaImage target_img, source_img;
  DepthRaster target_depth;
  double layer_depth = 3.0;

  PlaneFixture() {
    SceneLayer layer;
    layer.depth = layer_depth;
    layer.texture.type = TextureSpec::Type::kValueNoise;
    layer.texture.octaves = 2;
    layer.texture.scale = 0.5;
    layer.texture.contrast = 0.9;
    layer.texture.seed = 77;
    scene.layers = {layer};

    RigSpec rig;
    rig.intrinsics = {100, 100, 23.5, 23.5, 48, 48};
    rig.count = 2;
    rig.spacing = 0.25;
    rig.seed = 9;
    const auto cams = make_rig(rig);
    target = cams[0];
    source = cams[1];
    auto t = render_view(scene, target);
    target_img = t.first;
    target_depth = t.second;
    source_img = render_view(scene, source).first;
  }
};

}  // namespace

TEST_CASE("psv photoconsistency peaks at the true depth plane") {
  const PlaneFixture fx;
  DepthSampling s{2.0, 4.5, 9, DepthScheme::kInverseUniform};
  const auto depths = depth_planes(s);
  const Rect region{8, 8, 32, 32};
  const auto vol =
      build_psv({{&fx.source_img, fx.source}}, fx.target, s, region)[0];

  const double cam_depth = fx.layer_depth - fx.target.center().z();
  int true_nearest = 0;
  for (std::size_t z = 1; z < depths.size(); ++z)
    if (std::abs(1 / depths[z] - 1 / cam_depth) <
        std::abs(1 / depths[true_nearest] - 1 / cam_depth))
      true_nearest = static_cast<int>(z);

  int best_plane = -1;
  double best_err = 1e30;
  for (int z = 0; z < s.count; ++z) {
    double err = 0;
    int n = 0;
    for (int y = 0; y < region.height; ++y)
      for (int x = 0; x < region.width; ++x) {
        const float* p = vol.planes[z].at(x, y);
        if (p[3] < 1.f) continue;
        const float* t = fx.target_img.at(region.x + x, region.y + y);
        err += std::abs(p[0] - t[0]) + std::abs(p[1] - t[1]) + std::abs(p[2] - t[2]);
        ++n;
      }
    REQUIRE(n > 0);
    err /= n;
    if (err < best_err) {
      best_err = err;
      best_plane = z;
    }
  }
  CHECK(best_plane == true_nearest);
}

TEST_CASE("epipolar alignment: PSV columns reproduce source color at true depth") {
  const PlaneFixture fx;
  // Inverse-uniform grid through 1/2 .. 1/6 puts plane 2 exactly at the
  // layer depth of 3, so the column color is limited only by bilinear blur.
  DepthSampling s{2.0, 6.0, 5, DepthScheme::kInverseUniform};
  const auto depths = depth_planes(s);
  const Rect region{0, 0, 48, 48};
  const auto vol =
      build_psv({{&fx.source_img, fx.source}}, fx.target, s, region)[0];

  int checked = 0;
  for (int y = 2; y < 46; ++y) {
    for (int x = 2; x < 46; ++x) {
      const float d = fx.target_depth.at(x, y);
      REQUIRE(std::isfinite(d));
      int nearest = 0;
      for (std::size_t z = 1; z < depths.size(); ++z)
        if (std::abs(1 / depths[z] - 1.0 / d) <
            std::abs(1 / depths[nearest] - 1.0 / d))
          nearest = static_cast<int>(z);
      CHECK(nearest == 2);

      const float* column = vol.planes[static_cast<std::size_t>(nearest)].at(x, y);
      if (column[3] < 1.f) continue;
      const float* tgt = fx.target_img.at(x, y);
      for (int c = 0; c < 3; ++c)
        CHECK(std::abs(column[c] - tgt[c]) <= 2.f / 255.f);
      ++checked;
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("dump_psv writes a plane per depth plus an index") {
  Rng rng(6);
  const RgbaImage img = testutil::random_image(rng, 16, 16);
  Camera cam;
  cam.intrinsics = {20, 20, 8, 8, 16, 16};
  DepthSampling s{1.0, 2.0, 3, DepthScheme::kUniform};
  const auto vols = build_psv({{&img, cam}}, cam, s, {0, 0, 16, 16});
  const auto dir = std::filesystem::temp_directory_path() / "vs_psv_dump";
  std::filesystem::remove_all(dir);
  dump_psv(dir.string(), vols, depth_planes(s));
  for (int z = 0; z < 3; ++z)
    CHECK(std::filesystem::exists(dir / ("psv_s0_z" + std::to_string(z) + ".png")));
  CHECK(std::filesystem::exists(dir / "psv_index.txt"));
  std::filesystem::remove_all(dir);
}
