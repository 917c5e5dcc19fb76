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

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>

#include "viewsynth/dataset.hpp"
#include "viewsynth/gradcheck_suite.hpp"
#include "viewsynth/metrics.hpp"
#include "viewsynth/render.hpp"
#include "viewsynth/runconfig.hpp"
#include "viewsynth/synthdata.hpp"
#include "viewsynth/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace viewsynth;

namespace {

// Selection maps are written with cumulative rounding across planes, so the
// 8-bit planes of one pixel re-sum to round(255 * sum) +- 1 instead of
// drifting by up to D/2 quantization steps.
void write_selection_planes(const std::string& dir,
                            const Tensor<float>& selection) {
  const int d = selection.dim(0);
  const int h = selection.dim(1);
  const int w = selection.dim(2);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  std::vector<RgbaImage> planes(static_cast<std::size_t>(d), RgbaImage(w, h));
  for (std::int64_t i = 0; i < hw; ++i) {
    float running = 0;
    int emitted = 0;
    for (int z = 0; z < d; ++z) {
      running += std::clamp(selection[z * hw + i], 0.f, 1.f);
      const int cumulative =
          std::clamp(static_cast<int>(std::lround(running * 255.f)), 0, 255);
      const int byte = std::max(0, cumulative - emitted);
      emitted += byte;
      float* p = planes[static_cast<std::size_t>(z)].px.data() + 4 * i;
      p[0] = p[1] = p[2] = static_cast<float>(byte) / 255.f;
      p[3] = 1.f;
    }
  }
  for (int z = 0; z < d; ++z)
    write_png(dir + "/select_z" + std::to_string(z) + ".png",
              planes[static_cast<std::size_t>(z)]);
}

struct CommonFlags {
  std::string config_path;
  std::string out;
  std::int64_t seed = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--seed", seed, "RNG seed override");
  }

  json resolve() const {
    json j = load_run_config(config_path);
    if (seed >= 0) j["seed"] = static_cast<std::uint64_t>(seed);
    if (!out.empty()) j["out"] = out;
    return j;
  }
};

std::vector<std::string> dataset_dirs(const json& cfg,
                                      const std::vector<std::string>& flags) {
  std::vector<std::string> dirs = flags;
  if (dirs.empty())
    for (const auto& d : cfg.at("dataset"))
      dirs.push_back(d.get<std::string>());
  if (dirs.empty())
    throw std::runtime_error("no dataset: pass --dataset or set it in the config");
  return dirs;
}

int run_synth(const CommonFlags& common, int scenes_flag, int views_flag) {
  json cfg = common.resolve();
  if (scenes_flag > 0) cfg["synth"]["scenes"] = scenes_flag;
  if (views_flag > 0) cfg["synth"]["rig"]["count"] = views_flag;
  const std::string out = cfg.at("out").get<std::string>();
  const int scenes = cfg.at("synth").at("scenes").get<int>();
  const int eval_view = cfg.at("synth").at("eval_view").get<int>();

  fs::create_directories(out);
  json made = json::array();
  for (int i = 0; i < scenes; ++i) {
    auto [scene, rig] = synth_scene(cfg, i);
    std::vector<int> eval_views;
    if (eval_view >= 0 && eval_view < rig.count) eval_views.push_back(eval_view);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03d", i);
    const std::string manifest =
        make_dataset(scene, rig, out + "/" + name, name, eval_views);
    std::cout << manifest << "\n";
    made.push_back(out + "/" + name);
  }
  cfg["dataset"] = made;
  save_run_config(out, cfg);
  return 0;
}

int run_train(const CommonFlags& common, const std::vector<std::string>& datasets,
              const std::string& resume_path, std::int64_t steps, int batch,
              int threads, std::int64_t checkpoint_every, std::int64_t eval_every,
              double stop_psnr) {
  json cfg = common.resolve();
  if (steps >= 0) cfg["training"]["steps"] = steps;
  if (batch > 0) cfg["training"]["batch"] = batch;
  if (threads > 0) cfg["training"]["threads"] = threads;
  if (checkpoint_every >= 0) cfg["training"]["checkpoint_every"] = checkpoint_every;
  if (eval_every >= 0) cfg["training"]["eval_every"] = eval_every;
  if (stop_psnr >= 0) cfg["training"]["stop_psnr"] = stop_psnr;

  const auto dirs = dataset_dirs(cfg, datasets);
  cfg["dataset"] = dirs;
  const std::string out = cfg.at("out").get<std::string>();
  save_run_config(out, cfg);

  const auto scenes = load_scenes(dirs);
  const TowerConfig arch = cfg.at("arch").get<TowerConfig>();
  const DepthSampling sampling = cfg.at("depth_sampling").get<DepthSampling>();
  const SamplePolicy policy = cfg.at("policy").get<SamplePolicy>();
  TrainOptions opt = train_options_from(cfg);

  // Held-out views named by the datasets drive the optional early stop.
  for (std::size_t s = 0; s < scenes.size(); ++s)
    for (int v : scenes[s].eval_views)
      opt.eval_views.push_back({static_cast<int>(s), v});

  json run_config;
  run_config["run"] = cfg;

  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = load_checkpoint(resume_path);
  const TrainResult result =
      train(scenes, arch, sampling, policy, opt, out, run_config,
            resume ? &*resume : nullptr);
  std::cout << "final step " << result.final_step << " loss "
            << result.final_loss << " checkpoint " << result.checkpoint_path
            << "\n";
  return 0;
}

struct LoadedModel {
  Checkpoint cp;
  TowerConfig arch;
  DepthSampling sampling;
  SamplePolicy policy;
};

LoadedModel load_model(const std::string& checkpoint_path) {
  LoadedModel m;
  m.cp = load_checkpoint(checkpoint_path);
  m.arch = m.cp.config.at("arch").get<TowerConfig>();
  const json& run = m.cp.config.at("run").at("run");
  m.sampling = run.at("depth_sampling").get<DepthSampling>();
  m.policy = run.at("policy").get<SamplePolicy>();
  return m;
}

std::vector<int> resolve_sources(const SceneData& scene, int target,
                                 std::vector<int> sources, const LoadedModel& m) {
  if (sources.empty()) {
    sources = pick_sources(scene, target, m.policy.source_count,
                           m.policy.max_baseline);
    if (sources.empty())
      throw std::runtime_error("view " + std::to_string(target) + " lacks " +
                               std::to_string(m.policy.source_count) +
                               " sources within the baseline window");
    return sources;
  }
  std::string missing;
  for (int s : sources)
    if (s < 0 || s >= scene.view_count()) missing += " " + std::to_string(s);
  if (!missing.empty())
    throw std::runtime_error("missing source views:" + missing);
  if (static_cast<int>(sources.size()) != m.arch.source_count)
    throw std::runtime_error("model expects " +
                             std::to_string(m.arch.source_count) + " sources, got " +
                             std::to_string(sources.size()));
  return detail::order_by_signed_x(scene, target, sources);
}

int run_render(const std::string& checkpoint, const std::string& dataset,
               int target, std::vector<int> sources, const std::string& out_png,
               const std::string& timing_path, int threads, int patch_size) {
  LoadedModel m = load_model(checkpoint);
  if (patch_size > 0) {
    // The towers are fully convolutional: any valid patch size renders the
    // same pixels, in bigger or smaller tiles.
    m.arch.patch_size = patch_size;
    m.arch.validate();
  }
  const SceneData scene = load_scene(dataset);
  if (target < 0 || target >= scene.view_count())
    throw std::runtime_error("target view out of range");
  sources = resolve_sources(scene, target, std::move(sources), m);

  RenderOptions opt;
  opt.threads = threads;
  std::vector<double> tile_ms;
  opt.tile_ms = timing_path.empty() ? nullptr : &tile_ms;
  const auto t0 = std::chrono::steady_clock::now();
  const auto result =
      render_frame(source_views(scene, sources), scene.cameras.at(target),
                   m.cp.params, m.arch, m.sampling, opt);
  const double total_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();

  const fs::path out_path(out_png);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_png(out_png, image_from_rgb(result.image));
  if (!timing_path.empty()) {
    std::ofstream t(timing_path);
    t << "tile,ms\n";
    for (std::size_t i = 0; i < tile_ms.size(); ++i)
      t << i << "," << tile_ms[i] << "\n";
    t << "total," << total_ms << "\n";
  }
  json cfg = m.cp.config.at("run").at("run");
  save_run_config(out_path.has_parent_path() ? out_path.parent_path().string()
                                             : ".",
                  cfg);
  std::cout << out_png << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& dataset,
             std::vector<int> holdouts, const std::string& out_dir, int threads) {
  const LoadedModel m = load_model(checkpoint);
  const SceneData scene = load_scene(dataset);
  if (holdouts.empty()) holdouts = scene.eval_views;
  if (holdouts.empty())
    throw std::runtime_error("no holdout views given and none in the manifest");
  fs::create_directories(out_dir);

  json report = json::array();
  double psnr_sum = 0, l1_sum = 0;
  for (int holdout : holdouts) {
    if (holdout < 0 || holdout >= scene.view_count())
      throw std::runtime_error("holdout view " + std::to_string(holdout) +
                               " not in dataset");
    const auto sources = resolve_sources(scene, holdout, {}, m);
    RenderOptions opt;
    opt.threads = threads;
    const auto result =
        render_frame(source_views(scene, sources), scene.cameras.at(holdout),
                     m.cp.params, m.arch, m.sampling, opt);
    const Tensor<float> truth = rgb_tensor(scene.images.at(holdout));
    // Metrics run on the 8-bit-quantized render, so recomputing them from the
    // written PNGs reproduces these numbers exactly.
    const Tensor<float> rendered = quantize_to_bytes(result.image);
    const double l1 = mean_l1(rendered, truth);
    const double db = psnr(rendered, truth);
    psnr_sum += db;
    l1_sum += l1;

    const std::string tag = "view_" + std::to_string(holdout);
    write_png(out_dir + "/" + tag + "_render.png", image_from_rgb(result.image));
    write_png(out_dir + "/" + tag + "_pair.png",
              side_by_side(image_from_rgb(result.image),
                           scene.images.at(holdout)));
    report.push_back({{"view", holdout}, {"mean_l1", l1}, {"psnr", db},
                      {"sources", sources}});
    std::cout << tag << " mean_l1 " << l1 << " psnr " << db << "\n";
  }
  json summary = {{"views", report},
                  {"mean_psnr", psnr_sum / holdouts.size()},
                  {"mean_l1", l1_sum / holdouts.size()}};
  std::ofstream metrics(out_dir + "/metrics.json");
  metrics << summary.dump(2) << "\n";
  save_run_config(out_dir, m.cp.config.at("run").at("run"));
  std::cout << "mean psnr " << summary["mean_psnr"].get<double>() << "\n";
  return 0;
}

int run_inspect(const std::string& checkpoint, const std::string& dataset,
                int view, const std::string& out_dir, bool dump_psv_planes,
                int threads) {
  const LoadedModel m = load_model(checkpoint);
  const SceneData scene = load_scene(dataset);
  if (view < 0 || view >= scene.view_count())
    throw std::runtime_error("view out of range");
  const auto sources = resolve_sources(scene, view, {}, m);
  fs::create_directories(out_dir);

  RenderOptions opt;
  opt.threads = threads;
  opt.collect_planes = true;
  const auto result =
      render_frame(source_views(scene, sources), scene.cameras.at(view),
                   m.cp.params, m.arch, m.sampling, opt);

  const int d = m.arch.depth_planes;
  const int h = result.image.dim(1);
  const int w = result.image.dim(2);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;

  write_selection_planes(out_dir, result.selection);
  for (int z = 0; z < d; ++z) {
    Tensor<float> plane(Shape{3, h, w});
    for (int c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < hw; ++i)
        plane[c * hw + i] = result.color[(static_cast<std::int64_t>(z) * 3 + c) * hw + i];
    write_png(out_dir + "/color_z" + std::to_string(z) + ".png",
              image_from_rgb(plane));
  }

  RgbaImage argmax_img(w, h);
  for (std::int64_t i = 0; i < hw; ++i) {
    int best = 0;
    float best_v = result.selection[i];
    for (int z = 1; z < d; ++z)
      if (result.selection[z * hw + i] > best_v) {
        best_v = result.selection[z * hw + i];
        best = z;
      }
    const float g = static_cast<float>(best) / static_cast<float>(d - 1);
    float* p = argmax_img.px.data() + 4 * i;
    p[0] = p[1] = p[2] = g;
    p[3] = 1.f;
  }
  write_png(out_dir + "/depth_argmax.png", argmax_img);
  write_png(out_dir + "/render.png", image_from_rgb(result.image));

  if (dump_psv_planes) {
    const auto depths = depth_planes(m.sampling);
    const Rect frame{0, 0, w, h};
    const auto vols = build_psv(source_views(scene, sources),
                                scene.cameras.at(view), m.sampling, frame);
    dump_psv(out_dir + "/psv", vols, depths);
  }
  save_run_config(out_dir, m.cp.config.at("run").at("run"));
  std::cout << out_dir << "\n";
  return 0;
}

int run_gradcheck(const std::string& op, double tolerance, double step,
                  std::uint64_t seed) {
  bool all_passed = true;
  const auto outcomes = run_gradcheck_suite(seed, op, tolerance);
  if (outcomes.empty()) throw std::runtime_error("unknown op: " + op);
  (void)step;
  for (const auto& o : outcomes) {
    std::cout << (o.passed ? "PASS" : "FAIL") << " " << o.name
              << " max_rel_err " << o.report.max_rel_err << " tol "
              << o.tolerance;
    if (!o.report.worst_param.empty())
      std::cout << " worst " << o.report.worst_param << "[" << o.report.worst_index
                << "]";
    std::cout << "\n";
    all_passed = all_passed && o.passed;
  }
  if (!all_passed) throw std::runtime_error("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned novel view synthesis from posed image sets"};
  app.require_subcommand(1);

  CommonFlags synth_common, train_common;

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic posed datasets");
  synth_common.attach(synth);
  int synth_scenes = -1, synth_views = -1;
  synth->add_option("--scenes", synth_scenes, "number of scenes");
  synth->add_option("--views", synth_views, "views per scene");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_common.attach(train_cmd);
  std::vector<std::string> train_datasets;
  std::string resume_path;
  std::int64_t train_steps = -1, ckpt_every = -1, eval_every = -1;
  int train_batch = -1, train_threads = -1;
  double stop_psnr = -1;
  train_cmd->add_option("--dataset", train_datasets, "scene directories");
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  train_cmd->add_option("--steps", train_steps, "total training steps");
  train_cmd->add_option("--batch", train_batch, "mini-batch size");
  train_cmd->add_option("--threads", train_threads, "worker threads");
  train_cmd->add_option("--checkpoint-every", ckpt_every, "periodic checkpoints");
  train_cmd->add_option("--eval-every", eval_every, "eval cadence (steps)");
  train_cmd->add_option("--stop-psnr", stop_psnr, "stop once eval PSNR reached");

  // render
  auto* render_cmd = app.add_subcommand("render", "render a novel view");
  std::string render_ckpt, render_dataset, render_out = "render.png", timing;
  int render_target = 0, render_threads = 0, render_patch = 0;
  std::vector<int> render_sources;
  render_cmd->add_option("--checkpoint", render_ckpt)->required();
  render_cmd->add_option("--dataset", render_dataset)->required();
  render_cmd->add_option("--target", render_target, "target view index")->required();
  render_cmd->add_option("--sources", render_sources, "source view indices");
  render_cmd->add_option("--out", render_out, "output PNG");
  render_cmd->add_option("--timing", timing, "per-patch timing CSV");
  render_cmd->add_option("--patch-size", render_patch,
                         "override the output tile size");
  render_cmd->add_option("--threads", render_threads);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate on held-out views");
  std::string eval_ckpt, eval_dataset, eval_out = "eval";
  std::vector<int> eval_holdouts;
  int eval_threads = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--dataset", eval_dataset)->required();
  eval_cmd->add_option("--holdout", eval_holdouts, "held-out view indices");
  eval_cmd->add_option("--out", eval_out, "output directory");
  eval_cmd->add_option("--threads", eval_threads);

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "dump diagnostic images");
  std::string ins_ckpt, ins_dataset, ins_out = "inspect";
  int ins_view = 0, ins_threads = 0;
  bool ins_psv = false;
  inspect_cmd->add_option("--checkpoint", ins_ckpt)->required();
  inspect_cmd->add_option("--dataset", ins_dataset)->required();
  inspect_cmd->add_option("--view", ins_view, "view to inspect")->required();
  inspect_cmd->add_option("--out", ins_out, "output directory");
  inspect_cmd->add_flag("--psv", ins_psv, "also dump plane sweep volumes");
  inspect_cmd->add_option("--threads", ins_threads);

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference checks");
  std::string gc_op;
  double gc_tol = -1, gc_step = 1e-4;
  std::uint64_t gc_seed = 7;
  gc_cmd->add_option("--op", gc_op, "check a single op");
  gc_cmd->add_option("--tolerance", gc_tol, "override tolerance");
  gc_cmd->add_option("--step", gc_step, "finite-difference step");
  gc_cmd->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth(synth_common, synth_scenes, synth_views);
    if (train_cmd->parsed())
      return run_train(train_common, train_datasets, resume_path, train_steps,
                       train_batch, train_threads, ckpt_every, eval_every,
                       stop_psnr);
    if (render_cmd->parsed())
      return run_render(render_ckpt, render_dataset, render_target,
                        render_sources, render_out, timing, render_threads,
                        render_patch);
    if (eval_cmd->parsed())
      return run_eval(eval_ckpt, eval_dataset, eval_holdouts, eval_out,
                      eval_threads);
    if (inspect_cmd->parsed())
      return run_inspect(ins_ckpt, ins_dataset, ins_view, ins_out, ins_psv,
                         ins_threads);
    if (gc_cmd->parsed())
      return run_gradcheck(gc_op, gc_tol, gc_step, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
