#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"
#include "viewsynth/network.hpp"
#include "viewsynth/psv.hpp"
#include "viewsynth/synthdata.hpp"

using namespace viewsynth;

namespace {

PatchInputs<float> random_inputs(const TowerConfig& cfg, Rng& rng) {
  PatchInputs<float> in;
  for (int r = 0; r < cfg.resolutions; ++r) {
    const int n = cfg.pathway_input_size(r, cfg.patch_size);
    in.pathways.push_back(testutil::random_tensor<float>(
        {cfg.depth_planes, cfg.input_channels(), n, n}, rng, 0, 1));
  }
  return in;
}

}  // namespace

TEST_CASE("tower configs satisfy the 26x26 -> 8x8 contract") {
  for (const TowerConfig& cfg :
       {TowerConfig::full_default(), TowerConfig::desk_default()}) {
    cfg.validate();
    CHECK(cfg.total_shrink() == 18);
    CHECK(cfg.pathway_input_size(0, cfg.patch_size) == 26);
    CHECK(cfg.patch_size == 8);
  }
  const TowerConfig tiny = TowerConfig::tiny();
  tiny.validate();
  CHECK(tiny.pathway_input_size(0, tiny.patch_size) == 6);
}

TEST_CASE("tower config validation rejects bad bookkeeping") {
  TowerConfig cfg = TowerConfig::desk_default();
  cfg.per_plane[0].kernel = 4;  // even kernel
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = TowerConfig::full_default();
  cfg.post_merge.pop_back();  // merged size 14 is not divisible by 4 or 8
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = TowerConfig::tiny();
  cfg.depth_planes = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("init_params: deterministic, zero final cross-depth layer") {
  const TowerConfig cfg = TowerConfig::tiny();
  Rng a(5), b(5), c(6);
  const auto pa = init_params(cfg, a);
  const auto pb = init_params(cfg, b);
  const auto pc = init_params(cfg, c);
  REQUIRE(pa.size() == pb.size());
  bool all_equal_seed = true, any_diff_seed = false;
  for (const auto& [name, t] : pa) {
    all_equal_seed = all_equal_seed && tensors_equal(t, pb.at(name));
    any_diff_seed = any_diff_seed || !tensors_equal(t, pc.at(name));
  }
  CHECK(all_equal_seed);
  CHECK(any_diff_seed);

  const auto& final_w = pa.at("sel.d.c1.w");
  for (std::int64_t i = 0; i < final_w.size(); ++i) CHECK(final_w[i] == 0.f);
  CHECK(pa.count("col.out.w") == 1);
}

TEST_CASE("selection map: sums to 1 per pixel, uniform for zero parameters") {
  const TowerConfig cfg = TowerConfig::tiny(4, 2);
  Rng rng(9);

  ParamMap<float> zero;
  {
    Rng init_rng(1);
    for (auto& [name, t] : init_params(cfg, init_rng))
      zero.emplace(name, Tensor<float>(t.shape()));
  }
  const auto in = random_inputs(cfg, rng);
  const auto uniform = forward(in, zero, cfg);
  const std::int64_t hw = static_cast<std::int64_t>(cfg.patch_size) * cfg.patch_size;
  for (std::int64_t i = 0; i < hw; ++i)
    for (int z = 0; z < 4; ++z)
      CHECK(uniform.selection[z * hw + i] == Catch::Approx(0.25).margin(1e-6));
  for (std::int64_t i = 0; i < uniform.color.size(); ++i)
    CHECK(uniform.color[i] == 0.f);
  for (std::int64_t i = 0; i < uniform.image.size(); ++i)
    CHECK(uniform.image[i] == 0.f);

  for (int trial = 0; trial < 20; ++trial) {
    Rng prng(100 + trial);
    auto params = init_params(cfg, prng);
    // Randomize the zero-initialized layer so the map is non-trivial.
    params.at("sel.d.c1.w") = testutil::random_tensor<float>(
        params.at("sel.d.c1.w").shape(), prng, -0.5, 0.5);
    const auto result = forward(random_inputs(cfg, prng), params, cfg);
    for (std::int64_t i = 0; i < hw; ++i) {
      double sum = 0;
      for (int z = 0; z < 4; ++z) {
        const float v = result.selection[z * hw + i];
        CHECK(v > 0.f);
        CHECK(v < 1.f);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("color tower: passthrough parameters reproduce the input planes") {
  TowerConfig cfg;
  cfg.per_plane = {{3, 4}};
  cfg.post_merge = {{3, 6}};
  cfg.cross_depth = {4};
  cfg.resolutions = 1;
  cfg.depth_planes = 3;
  cfg.source_count = 1;
  cfg.patch_size = 4;
  cfg.validate();

  Rng rng(11);
  ParamMap<float> params;
  {
    Rng init_rng(2);
    params = init_params(cfg, init_rng);
  }
  // Route R,G,B through the first three channels with centered delta kernels.
  auto delta = [](Shape shape, int pass_channels) {
    Tensor<float> w(shape);
    const int kh = shape[2], kw = shape[3];
    for (int c = 0; c < pass_channels; ++c) w.at(c, c, kh / 2, kw / 2) = 1.f;
    return w;
  };
  params.at("col.p0.c0.w") = delta({4, 4, 3, 3}, 3);
  params.at("col.p0.c0.b") = Tensor<float>({4});
  params.at("col.m.c0.w") = delta({6, 4, 3, 3}, 3);
  params.at("col.m.c0.b") = Tensor<float>({6});
  params.at("col.out.w") = delta({3, 6, 1, 1}, 3);
  params.at("col.out.b") = Tensor<float>({3});

  const auto in = random_inputs(cfg, rng);  // [3, 4, 8, 8]
  const auto result = forward(in, params, cfg);
  // Output plane z should equal the central 4x4 crop of plane z's RGB.
  for (int z = 0; z < 3; ++z)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
          CHECK(result.color.at(z, c, y, x) ==
                Catch::Approx(in.pathways[0].at(z, c, y + 2, x + 2)).margin(1e-6));
}

TEST_CASE("depth-plane permutation: color equivariant, selection not") {
  const TowerConfig cfg = TowerConfig::tiny(4, 2);
  Rng rng(13);
  auto params = init_params(cfg, rng);
  params.at("sel.d.c1.w") = testutil::random_tensor<float>(
      params.at("sel.d.c1.w").shape(), rng, -0.5, 0.5);

  const auto in = random_inputs(cfg, rng);
  PatchInputs<float> permuted;
  {
    const std::vector<int> perm{2, 0, 3, 1};
    Tensor<float> t(in.pathways[0].shape());
    const std::int64_t slab = in.pathways[0].numel_from(1);
    for (int z = 0; z < 4; ++z)
      std::copy(in.pathways[0].data() + perm[z] * slab,
                in.pathways[0].data() + (perm[z] + 1) * slab,
                t.data() + z * slab);
    permuted.pathways.push_back(std::move(t));

    const auto base = forward(in, params, cfg);
    const auto swapped = forward(permuted, params, cfg);

    // Color planes permute exactly with the input planes.
    const std::int64_t color_slab = base.color.numel_from(1);
    for (int z = 0; z < 4; ++z)
      for (std::int64_t i = 0; i < color_slab; ++i)
        CHECK(swapped.color[z * color_slab + i] ==
              base.color[perm[z] * color_slab + i]);

    // The cross-depth stage makes the selection map depend on plane order.
    CHECK_FALSE(tensors_equal(base.selection, swapped.selection));
  }
}

TEST_CASE("combine: one-hot selection reproduces the chosen plane exactly") {
  Rng rng(17);
  const int d = 5, h = 4, w = 4;
  const auto color = testutil::random_tensor<float>({d, 3, h, w}, rng, -2, 2);
  Tensor<float> sel({d, h, w});
  std::vector<int> pick(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h * w; ++i) {
    pick[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(d));
    sel[pick[static_cast<std::size_t>(i)] * h * w + i] = 1.f;
  }
  const auto out = combine(sel, color);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h * w; ++i)
      CHECK(out[c * h * w + i] ==
            color[(pick[static_cast<std::size_t>(i)] * 3 + c) * h * w + i]);

  // The graph path (eltwise_mul + sum_over_axis) agrees bitwise.
  Graph<float> g;
  const auto node = g.sum_over_axis(
      g.eltwise_mul(g.reshape(g.constant(sel), {d, 1, h, w}), g.constant(color)),
      0);
  CHECK(g.value(node).vec() == out.vec());
}

TEST_CASE("combine: uniform selection of a constant volume returns it") {
  const int d = 4, h = 2, w = 2;
  const auto color = Tensor<float>::full({d, 3, h, w}, 0.37f);
  const auto sel = Tensor<float>::full({d, h, w}, 0.25f);
  const auto out = combine(sel, color);
  for (std::int64_t i = 0; i < out.size(); ++i)
    CHECK(out[i] == Catch::Approx(0.37f).margin(1e-7));
}

TEST_CASE("combine: output lies in the per-pixel color hull") {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(6));
    const auto color = testutil::random_tensor<float>({d, 3, 3, 3}, rng, -3, 3);
    Tensor<float> sel({d, 3, 3});
    for (int i = 0; i < 9; ++i) {
      double sum = 0;
      for (int z = 0; z < d; ++z) {
        sel[z * 9 + i] = static_cast<float>(rng.uniform(0.01, 1));
        sum += sel[z * 9 + i];
      }
      for (int z = 0; z < d; ++z)
        sel[z * 9 + i] = static_cast<float>(sel[z * 9 + i] / sum);
    }
    const auto out = combine(sel, color);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 9; ++i) {
        float lo = 1e30f, hi = -1e30f;
        for (int z = 0; z < d; ++z) {
          lo = std::min(lo, color[(z * 3 + c) * 9 + i]);
          hi = std::max(hi, color[(z * 3 + c) * 9 + i]);
        }
        CHECK(out[c * 9 + i] >= lo - 1e-6f);
        CHECK(out[c * 9 + i] <= hi + 1e-6f);
      }
  }
}

TEST_CASE("multires_preprocess: pathway 0 is the raw crop, lower pathways box-filter") {
  TowerConfig cfg;
  cfg.per_plane = {{3, 4}, {3, 4}};
  cfg.post_merge = {{3, 4}, {3, 4}};
  cfg.cross_depth = {8};
  cfg.resolutions = 2;
  cfg.depth_planes = 2;
  cfg.source_count = 1;
  cfg.patch_size = 8;
  cfg.validate();

  Rng rng(23);
  const Rect out_rect{10, 10, 8, 8};
  const int e1 = cfg.context_extent(1, 8);
  const Rect region = centered_rect(out_rect, e1, e1);

  PlaneSweepVolume vol;
  vol.source_index = 0;
  vol.region = region;
  vol.planes = {testutil::random_image(rng, region.width, region.height),
                testutil::random_image(rng, region.width, region.height)};
  const auto in = multires_preprocess<float>({vol}, out_rect, cfg);

  REQUIRE(in.pathways.size() == 2);
  const int n0 = cfg.pathway_input_size(0, 8);
  REQUIRE(in.pathways[0].shape() == Shape{2, 4, n0, n0});

  const Rect ctx0 = pathway_context(cfg, out_rect, 0);
  for (int z = 0; z < 2; ++z)
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < n0; ++y)
        for (int x = 0; x < n0; ++x)
          CHECK(in.pathways[0].at(z, c, y, x) ==
                vol.planes[z].at(ctx0.x - region.x + x, ctx0.y - region.y + y)[c]);

  // Pathway 1: each pixel is the box average of a 2x2 block (alpha 1 here).
  const Rect ctx1 = pathway_context(cfg, out_rect, 1);
  const int n1 = cfg.pathway_input_size(1, 8);
  for (int y = 0; y < n1; ++y)
    for (int x = 0; x < n1; ++x) {
      float expected = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          expected += vol.planes[0].at(ctx1.x - region.x + 2 * x + dx,
                                       ctx1.y - region.y + 2 * y + dy)[0];
      expected *= 0.25f;
      CHECK(in.pathways[1].at(0, 0, y, x) == Catch::Approx(expected).margin(1e-6));
    }

  // A constant volume stays constant on every pathway.
  PlaneSweepVolume flat = vol;
  for (auto& p : flat.planes) p.fill(0.3f, 0.5f, 0.7f, 1.f);
  const auto flat_in = multires_preprocess<float>({flat}, out_rect, cfg);
  for (int r = 0; r < 2; ++r) {
    const auto& t = flat_in.pathways[r];
    const std::int64_t chan = t.numel_from(2);
    for (std::int64_t i = 0; i < chan; ++i) {
      CHECK(t[0 * chan + i] == Catch::Approx(0.3f).margin(1e-6));
      CHECK(t[3 * chan + i] == 1.f);
    }
  }
}

TEST_CASE("patch tiling: one 16x16 pass equals four 8x8 passes") {
  // Two-pathway configuration over real sweep geometry.
  TowerConfig cfg;
  cfg.per_plane = {{3, 4}, {3, 4}};
  cfg.post_merge = {{3, 4}, {3, 4}};
  cfg.cross_depth = {8};
  cfg.resolutions = 2;
  cfg.depth_planes = 3;
  cfg.source_count = 2;
  cfg.patch_size = 8;
  cfg.validate();
  cfg.check_output_size(16);

  SceneSpec scene;
  for (int i = 0; i < 3; ++i) {
    SceneLayer layer;
    layer.depth = 2.0 + i;
    layer.texture.type = TextureSpec::Type::kValueNoise;
    layer.texture.scale = 0.3;
    layer.texture.seed = 40 + static_cast<std::uint64_t>(i);
    if (i == 0) {
      layer.x0 = -0.2;
      layer.x1 = 0.5;
      layer.y0 = -0.4;
      layer.y1 = 0.3;
    }
    scene.layers.push_back(layer);
  }
  RigSpec rig;
  rig.intrinsics = {90, 90, 31.5, 31.5, 64, 64};
  rig.count = 3;
  rig.spacing = 0.12;
  rig.seed = 3;
  const auto cams = make_rig(rig);
  const auto img1 = render_view(scene, cams[1]).first;
  const auto img2 = render_view(scene, cams[2]).first;
  const std::vector<SourceView> sources{{&img1, cams[1]}, {&img2, cams[2]}};

  DepthSampling sampling{1.8, 5.5, 3, DepthScheme::kInverseUniform};
  Rng rng(31);
  auto params = init_params(cfg, rng);
  params.at("sel.d.c1.w") = testutil::random_tensor<float>(
      params.at("sel.d.c1.w").shape(), rng, -0.5, 0.5);

  auto render_region = [&](const Rect& out_rect) {
    const int extent_w = cfg.pathway_input_size(cfg.resolutions - 1, out_rect.width)
                         << (cfg.resolutions - 1);
    const int extent_h = cfg.pathway_input_size(cfg.resolutions - 1, out_rect.height)
                         << (cfg.resolutions - 1);
    const Rect ctx = centered_rect(out_rect, extent_w, extent_h);
    const auto psvs = build_psv(sources, cams[0], sampling, ctx);
    const auto inputs = multires_preprocess<float>(psvs, out_rect, cfg);
    return forward(inputs, params, cfg);
  };

  const auto whole = render_region({24, 24, 16, 16});
  double max_diff = 0;
  for (int ty = 0; ty < 2; ++ty)
    for (int tx = 0; tx < 2; ++tx) {
      const auto part = render_region({24 + 8 * tx, 24 + 8 * ty, 8, 8});
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            max_diff = std::max(
                max_diff,
                std::abs(static_cast<double>(part.image.at(c, y, x)) -
                         whole.image.at(c, 8 * ty + y, 8 * tx + x)));
    }
  INFO("max tile difference " << max_diff);
  CHECK(max_diff < 1e-5);
}

TEST_CASE("forward rejects inputs below the receptive field") {
  const TowerConfig cfg = TowerConfig::tiny();
  Rng rng(37);
  auto params = init_params(cfg, rng);
  PatchInputs<float> in;
  in.pathways.push_back(testutil::random_tensor<float>(
      {cfg.depth_planes, cfg.input_channels(), 2, 2}, rng, 0, 1));
  CHECK_THROWS_AS(forward(in, params, cfg), std::invalid_argument);
}
