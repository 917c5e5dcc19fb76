#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "viewsynth/runconfig.hpp"
#include "viewsynth/synthdata.hpp"
#include "viewsynth/training.hpp"

using namespace viewsynth;
namespace fs = std::filesystem;

namespace {

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small in-memory scene: three noise layers, identity-rotation track.
SceneData make_tiny_scene(int views, int image_size, double spacing,
                          std::uint64_t seed, std::vector<int> eval_views = {}) {
  SceneSpec scene;
  for (int i = 0; i < 3; ++i) {
    SceneLayer layer;
    layer.depth = 2.0 + 0.8 * i;
    layer.texture.type = TextureSpec::Type::kValueNoise;
    layer.texture.scale = 0.25;
    layer.texture.contrast = 0.9;
    layer.texture.seed = seed * 10 + static_cast<std::uint64_t>(i);
    if (i == 0) {
      layer.x0 = -0.25;
      layer.x1 = 0.3;
      layer.y0 = -0.3;
      layer.y1 = 0.25;
    }
    if (i == 1) {
      layer.x0 = -1.0;
      layer.x1 = 0.1;
      layer.y0 = -1.0;
      layer.y1 = 1.0;
    }
    scene.layers.push_back(layer);
  }
  RigSpec rig;
  const double c = (image_size - 1) / 2.0;
  rig.intrinsics = {1.5 * image_size, 1.5 * image_size, c, c,
                    image_size, image_size};
  rig.count = views;
  rig.spacing = spacing;
  rig.jitter = 0.01;
  rig.seed = seed;

  SceneData data;
  data.scene_id = "tiny_" + std::to_string(seed);
  data.cameras = make_rig(rig);
  for (const auto& cam : data.cameras) {
    auto [img, depth] = render_view(scene, cam);
    data.images.push_back(std::move(img));
    data.depths.push_back(std::move(depth));
  }
  for (const auto& l : scene.layers) data.layer_depths.push_back(l.depth);
  data.eval_views = std::move(eval_views);
  return data;
}

struct TinySetup {
  std::vector<SceneData> scenes;
  TowerConfig cfg = TowerConfig::tiny();  // D=3, K=2, patch 2
  DepthSampling sampling{1.7, 3.9, 3, DepthScheme::kInverseUniform};
  SamplePolicy policy{2, 1.0, true};

  TinySetup() { scenes.push_back(make_tiny_scene(4, 24, 0.08, 5)); }
};

}  // namespace

TEST_CASE("adagrad: zero gradient leaves parameters and accumulators unchanged") {
  ParamMap<float> params;
  params.emplace("p", Tensor<float>::full({3}, 1.5f));
  ParamMap<float> grads;
  grads.emplace("p", Tensor<float>({3}));
  AdagradState st;
  st.accum.emplace("p", Tensor<float>::full({3}, 0.25f));
  adagrad_step(params, grads, st);
  for (int i = 0; i < 3; ++i) {
    CHECK(params.at("p")[i] == 1.5f);
    CHECK(st.accum.at("p")[i] == 0.25f);
  }
}

TEST_CASE("adagrad: hand-evaluated first step") {
  ParamMap<double> params;
  params.emplace("p", Tensor<double>({1}));
  ParamMap<double> grads;
  grads.emplace("p", Tensor<double>::full({1}, 2.0));
  AdagradStateT<double> st;
  st.lr = 0.1;
  st.eps = 1e-8;
  adagrad_step(params, grads, st);
  CHECK(std::abs(st.accum.at("p")[0] - 4.0) < 1e-12);
  CHECK(std::abs(params.at("p")[0] - (-0.1 * 2.0 / (2.0 + 1e-8))) < 1e-12);
}

TEST_CASE("adagrad: two unit-gradient steps with lr 1, eps 0") {
  ParamMap<double> params;
  params.emplace("p", Tensor<double>({1}));
  ParamMap<double> grads;
  grads.emplace("p", Tensor<double>::full({1}, 1.0));
  AdagradStateT<double> st;
  st.lr = 1.0;
  st.eps = 0.0;
  adagrad_step(params, grads, st);
  CHECK(std::abs(params.at("p")[0] - (-1.0)) < 1e-12);
  adagrad_step(params, grads, st);
  CHECK(std::abs(params.at("p")[0] - (-1.0 - 1.0 / std::sqrt(2.0))) < 1e-12);
}

TEST_CASE("adagrad: accumulators monotone, step size bounded by lr") {
  Rng rng(21);
  ParamMap<float> params;
  params.emplace("p", testutil::random_tensor<float>({16}, rng));
  AdagradState st;
  st.lr = 0.05f;
  Tensor<float> prev_acc({16});
  for (int step = 0; step < 30; ++step) {
    ParamMap<float> grads;
    grads.emplace("p", testutil::random_tensor<float>({16}, rng, -3, 3));
    const Tensor<float> before = params.at("p");
    adagrad_step(params, grads, st);
    for (int i = 0; i < 16; ++i) {
      CHECK(st.accum.at("p")[i] >= prev_acc[i]);
      CHECK(std::abs(params.at("p")[i] - before[i]) <= st.lr + 1e-7f);
    }
    prev_acc = st.accum.at("p");
  }
}

TEST_CASE("adagrad: non-finite gradient aborts the step with the name") {
  ParamMap<float> params;
  params.emplace("tower.w", Tensor<float>::full({2}, 1.0f));
  ParamMap<float> grads;
  Tensor<float> bad({2});
  bad[1] = std::numeric_limits<float>::quiet_NaN();
  grads.emplace("tower.w", bad);
  AdagradState st;
  try {
    adagrad_step(params, grads, st);
    FAIL("expected exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("tower.w") != std::string::npos);
  }
  CHECK(params.at("tower.w")[0] == 1.0f);  // untouched
  CHECK(st.accum.empty());
}

TEST_CASE("checkpoint: save -> load -> save is byte-identical") {
  Rng rng(33);
  Checkpoint cp;
  cp.config = {{"arch", TowerConfig::tiny()}, {"note", "x"}};
  cp.params.emplace("a.w", testutil::random_tensor<float>({2, 3}, rng));
  cp.params.emplace("b.w", testutil::random_tensor<float>({4}, rng));
  cp.accum.emplace("a.w", testutil::random_tensor<float>({2, 3}, rng, 0, 1));
  cp.step = 1234;
  cp.rng_state = Rng(9).state();
  cp.lr = 0.0005;
  cp.eps = 1e-8;

  const fs::path dir = fs::temp_directory_path() / "vs_ckpt_test";
  fs::create_directories(dir);
  const auto p1 = (dir / "a.dswt").string();
  const auto p2 = (dir / "b.dswt").string();
  save_checkpoint(p1, cp);
  const Checkpoint loaded = load_checkpoint(p1);
  CHECK(loaded.step == cp.step);
  CHECK(loaded.rng_state == cp.rng_state);
  CHECK(loaded.lr == cp.lr);
  CHECK(tensors_equal(loaded.params.at("a.w"), cp.params.at("a.w")));
  CHECK(tensors_equal(loaded.accum.at("a.w"), cp.accum.at("a.w")));
  CHECK(loaded.config.at("note") == "x");
  save_checkpoint(p2, loaded);
  CHECK(file_bytes(p1) == file_bytes(p2));

  SECTION("corrupt magic rejected") {
    auto bytes = file_bytes(p1);
    bytes[0] = 'X';
    std::ofstream out(p2, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_WITH(load_checkpoint(p2),
                      Catch::Matchers::ContainsSubstring("not a checkpoint"));
  }
  SECTION("version mismatch rejected") {
    auto bytes = file_bytes(p1);
    bytes[4] = 99;
    std::ofstream out(p2, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_WITH(load_checkpoint(p2),
                      Catch::Matchers::ContainsSubstring("version"));
  }
  SECTION("truncation is an error, not a crash") {
    const auto bytes = file_bytes(p1);
    for (std::size_t keep : {std::size_t{5}, std::size_t{20}, bytes.size() - 7}) {
      std::ofstream out(p2, std::ios::binary | std::ios::trunc);
      out.write(bytes.data(), static_cast<std::streamsize>(keep));
      out.close();
      CHECK_THROWS_AS(load_checkpoint(p2), std::runtime_error);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("sample stream: seed-deterministic, hold-one-out with K+1 views") {
  const TinySetup fx;
  SampleStream a(&fx.scenes, fx.policy, fx.sampling, fx.cfg, Rng(77));
  SampleStream b(&fx.scenes, fx.policy, fx.sampling, fx.cfg, Rng(77));
  for (int i = 0; i < 100; ++i) {
    const auto da = a.next();
    const auto db = b.next();
    CHECK(da.scene == db.scene);
    CHECK(da.target_view == db.target_view);
    CHECK(da.sources == db.sources);
    CHECK(da.ox == db.ox);
    CHECK(da.oy == db.oy);
  }

  // Exactly K+1 views: the target is the held-out view, sources the rest.
  std::vector<SceneData> k1;
  k1.push_back(make_tiny_scene(3, 24, 0.08, 6));
  SampleStream s(&k1, fx.policy, fx.sampling, fx.cfg, Rng(5));
  for (int i = 0; i < 20; ++i) {
    const auto d = s.next();
    std::vector<int> expected;
    for (int v = 0; v < 3; ++v)
      if (v != d.target_view) expected.push_back(v);
    auto sorted = d.sources;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == expected);
  }
}

TEST_CASE("sample stream: scene with too few views is skipped with a warning") {
  std::vector<SceneData> scenes;
  scenes.push_back(make_tiny_scene(2, 24, 0.08, 7));  // < K+1 views
  scenes.push_back(make_tiny_scene(4, 24, 0.08, 8));
  const TinySetup fx;
  SampleStream s(&scenes, fx.policy, fx.sampling, fx.cfg, Rng(1));
  for (int i = 0; i < 10; ++i) CHECK(s.next().scene == 1);

  std::vector<SceneData> only_bad;
  only_bad.push_back(make_tiny_scene(2, 24, 0.08, 9));
  CHECK_THROWS_AS(SampleStream(&only_bad, fx.policy, fx.sampling, fx.cfg, Rng(1)),
                  std::runtime_error);
}

TEST_CASE("sample stream: target patch equals the ground-truth crop") {
  const TinySetup fx;
  SampleStream s(&fx.scenes, fx.policy, fx.sampling, fx.cfg, Rng(3));
  for (int i = 0; i < 10; ++i) {
    const auto d = s.next();
    const auto sample = s.build(d);
    const RgbaImage& img = fx.scenes[static_cast<std::size_t>(d.scene)]
                               .images[static_cast<std::size_t>(d.target_view)];
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < fx.cfg.patch_size; ++y)
        for (int x = 0; x < fx.cfg.patch_size; ++x)
          CHECK(sample.target.at(c, y, x) == img.at(d.ox + x, d.oy + y)[c]);
  }
}

TEST_CASE("minibatch: loss sums exactly and ignores order") {
  const TinySetup fx;
  SampleStream s(&fx.scenes, fx.policy, fx.sampling, fx.cfg, Rng(13));
  Rng prng(1);
  const auto params = init_params(fx.cfg, prng);

  const auto batch1 = make_minibatch(s, 1);
  const auto single = sample_forward_backward(batch1[0], params, fx.cfg);
  const auto b1 = batch_forward_backward(batch1, params, fx.cfg);
  CHECK(b1.loss == static_cast<double>(single.loss));

  std::vector<TrainingSample> twice{batch1[0], batch1[0]};
  const auto b2 = batch_forward_backward(twice, params, fx.cfg);
  CHECK(b2.loss == 2.0 * static_cast<double>(single.loss));
  for (const auto& [name, g] : b2.grads) {
    const auto& g1 = b1.grads.at(name);
    for (std::int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 2.f * g1[i]);
  }

  auto batch6 = make_minibatch(s, 6);
  const auto fwd = batch_forward_backward(batch6, params, fx.cfg);
  std::vector<TrainingSample> shuffled{batch6[4], batch6[1], batch6[5],
                                       batch6[0], batch6[3], batch6[2]};
  const auto bwd = batch_forward_backward(shuffled, params, fx.cfg);
  CHECK(fwd.loss == bwd.loss);
}

TEST_CASE("training: zero learning rate leaves parameters bit-identical") {
  const TinySetup fx;
  const fs::path dir = fs::temp_directory_path() / "vs_train_zerolr";
  fs::remove_all(dir);
  TrainOptions opt;
  opt.batch = 2;
  opt.steps = 5;
  opt.lr = 0.0;
  opt.seed = 11;
  opt.threads = 1;
  const auto result =
      train(fx.scenes, fx.cfg, fx.sampling, fx.policy, opt, dir.string());
  const Checkpoint cp = load_checkpoint(result.checkpoint_path);

  Rng init_rng(11);
  const auto fresh = init_params(fx.cfg, init_rng);
  for (const auto& [name, t] : fresh)
    CHECK(tensors_equal(cp.params.at(name), t));
  fs::remove_all(dir);
}

TEST_CASE("training: resume reproduces an unbroken run bit for bit") {
  const TinySetup fx;
  const fs::path base = fs::temp_directory_path() / "vs_train_resume";
  fs::remove_all(base);

  TrainOptions opt;
  opt.batch = 2;
  opt.steps = 14;
  opt.seed = 19;
  opt.threads = 2;

  const auto full =
      train(fx.scenes, fx.cfg, fx.sampling, fx.policy, opt, (base / "full").string());

  TrainOptions half = opt;
  half.steps = 7;
  const auto first =
      train(fx.scenes, fx.cfg, fx.sampling, fx.policy, half, (base / "half").string());
  const Checkpoint mid = load_checkpoint(first.checkpoint_path);
  const auto resumed = train(fx.scenes, fx.cfg, fx.sampling, fx.policy, opt,
                             (base / "half").string(), nlohmann::json::object(),
                             &mid);

  CHECK(file_bytes(full.checkpoint_path) == file_bytes(resumed.checkpoint_path));
  fs::remove_all(base);
}

TEST_CASE("training: frozen batch loss decreases over any 10-step window") {
  const TinySetup fx;
  SampleStream s(&fx.scenes, fx.policy, fx.sampling, fx.cfg, Rng(23));
  const auto batch = make_minibatch(s, 4);
  Rng prng(23);
  auto params = init_params(fx.cfg, prng);
  AdagradState st;
  st.lr = 5e-4f;

  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    auto res = batch_forward_backward(batch, params, fx.cfg);
    losses.push_back(res.loss);
    adagrad_step(params, res.grads, st);
  }
  for (std::size_t i = 0; i + 10 < losses.size(); ++i)
    CHECK(losses[i + 10] < losses[i]);
}

TEST_CASE("training: single-sample overfit reaches 1% of initial loss") {
  // Desk-scale configuration (D=16, K=5), one fixed sample, 2000 steps.
  std::vector<SceneData> scenes;
  scenes.push_back(make_tiny_scene(6, 40, 0.06, 31));
  const TowerConfig cfg = TowerConfig::desk_default(16, 5);
  const DepthSampling sampling{1.7, 3.9, 16, DepthScheme::kInverseUniform};
  const SamplePolicy policy{5, 1.0, true};

  SampleStream s(&scenes, policy, sampling, cfg, Rng(41));
  const auto batch = make_minibatch(s, 1);
  Rng prng(41);
  auto params = init_params(cfg, prng);
  AdagradState st;
  st.lr = 5e-4f;

  double initial = -1, current = -1;
  for (int step = 0; step < 2000; ++step) {
    auto res = batch_forward_backward(batch, params, cfg, 1);
    if (initial < 0) initial = res.loss;
    current = res.loss;
    if (current < 0.01 * initial) break;
    adagrad_step(params, res.grads, st);
  }
  INFO("initial " << initial << " final " << current);
  CHECK(current < 0.01 * initial);
}

TEST_CASE("run config: defaults valid, merge respects overrides") {
  const auto base = default_run_config();
  const TowerConfig arch = base.at("arch").get<TowerConfig>();
  arch.validate();
  const DepthSampling sampling = base.at("depth_sampling").get<DepthSampling>();
  sampling.validate();

  const fs::path p = fs::temp_directory_path() / "vs_cfg_test.json";
  {
    std::ofstream out(p);
    out << R"({"training": {"steps": 42}, "seed": 9})";
  }
  const auto merged = load_run_config(p.string());
  CHECK(merged.at("training").at("steps").get<int>() == 42);
  CHECK(merged.at("seed").get<int>() == 9);
  CHECK(merged.at("training").at("batch") == base.at("training").at("batch"));
  fs::remove(p);
}

TEST_CASE("metrics: psnr caps at 99 for identical images") {
  Rng rng(55);
  const auto t = testutil::random_tensor<float>({3, 8, 8}, rng, 0, 1);
  CHECK(psnr(t, t) == 99.0);
  CHECK(mean_l1(t, t) == 0.0);

  const auto a = Tensor<float>::full({3, 4, 4}, 0.5f);
  const auto b = Tensor<float>::full({3, 4, 4}, 0.25f);
  CHECK(mean_l1(a, b) == Catch::Approx(0.25).margin(1e-7));
  CHECK(psnr(a, b) == Catch::Approx(10 * std::log10(1.0 / 0.0625)).margin(1e-9));
}
