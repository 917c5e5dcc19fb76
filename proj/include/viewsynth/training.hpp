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

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "viewsynth/dataset.hpp"
#include "viewsynth/network.hpp"
#include "viewsynth/render.hpp"

namespace viewsynth {

// --- sample generation ------------------------------------------------------

struct SamplePolicy {
  int source_count = 5;
  double max_baseline = 1.0;        // world units
  bool exclude_eval_targets = true;  // eval views never become targets
};

struct SampleDescriptor {
  int scene = 0;
  int target_view = 0;
  std::vector<int> sources;  // ordered by signed x-offset from the target
  int ox = 0, oy = 0;        // output patch origin in the target frame
};

// One hold-one-out training example: the ground-truth 8x8 target patch plus
// the multi-resolution sweep-volume crops that feed one forward pass.
struct TrainingSample {
  PatchInputs<float> inputs;
  Tensor<float> target;  // [3, patch, patch]
  SampleDescriptor meta;
};

namespace detail {

inline std::vector<int> order_by_signed_x(const SceneData& scene, int target,
                                          std::vector<int> views) {
  const double tx = scene.cameras.at(target).center().x();
  std::sort(views.begin(), views.end(), [&](int a, int b) {
    const double ax = scene.cameras[a].center().x() - tx;
    const double bx = scene.cameras[b].center().x() - tx;
    return ax != bx ? ax < bx : a < b;
  });
  return views;
}

}  // namespace detail

// Unbounded seed-deterministic stream of hold-one-out samples. Descriptor
// draws consume the stream RNG in a fixed sequential order; building the
// sample from a descriptor is pure, so batches may be built in parallel.
class SampleStream {
 public:
  SampleStream(const std::vector<SceneData>* scenes, SamplePolicy policy,
               DepthSampling sampling, TowerConfig cfg, Rng rng)
      : scenes_(scenes),
        policy_(policy),
        sampling_(sampling),
        cfg_(std::move(cfg)),
        rng_(rng) {
    cfg_.validate();
    sampling_.validate();
    for (std::size_t s = 0; s < scenes_->size(); ++s) {
      const SceneData& scene = (*scenes_)[s];
      std::vector<int> targets;
      for (int v = 0; v < scene.view_count(); ++v) {
        if (policy_.exclude_eval_targets && scene.is_eval_view(v)) continue;
        if (static_cast<int>(candidate_sources(scene, v).size()) >=
            policy_.source_count)
          targets.push_back(v);
      }
      if (targets.empty()) {
        std::cerr << "warning: scene " << scene.scene_id
                  << " skipped: no view has " << policy_.source_count
                  << " sources within baseline " << policy_.max_baseline
                  << "\n";
      } else {
        usable_.push_back({static_cast<int>(s), std::move(targets)});
      }
    }
    if (usable_.empty())
      throw std::runtime_error("sample stream: no usable scenes");
  }

  Rng& rng() { return rng_; }
  const TowerConfig& config() const { return cfg_; }
  const DepthSampling& sampling() const { return sampling_; }

  SampleDescriptor next() {
    const auto& [scene_index, targets] =
        usable_[rng_.below(usable_.size())];
    const SceneData& scene = (*scenes_)[static_cast<std::size_t>(scene_index)];
    SampleDescriptor d;
    d.scene = scene_index;
    d.target_view = targets[rng_.below(targets.size())];

    std::vector<int> candidates = candidate_sources(scene, d.target_view);
    const int k = policy_.source_count;
    if (static_cast<int>(candidates.size()) > k) {
      // Partial Fisher-Yates draw of k distinct candidates.
      for (int i = 0; i < k; ++i) {
        const auto j = i + static_cast<int>(rng_.below(candidates.size() - i));
        std::swap(candidates[i], candidates[static_cast<std::size_t>(j)]);
      }
      candidates.resize(static_cast<std::size_t>(k));
    }
    d.sources = detail::order_by_signed_x(scene, d.target_view, candidates);

    const Intrinsics& in = scene.cameras[d.target_view].intrinsics;
    d.ox = static_cast<int>(rng_.below(in.width - cfg_.patch_size + 1));
    d.oy = static_cast<int>(rng_.below(in.height - cfg_.patch_size + 1));
    return d;
  }

  TrainingSample build(const SampleDescriptor& d) const {
    const SceneData& scene = (*scenes_)[static_cast<std::size_t>(d.scene)];
    const Camera& target_cam = scene.cameras.at(d.target_view);
    const Rect out_rect{d.ox, d.oy, cfg_.patch_size, cfg_.patch_size};
    const int extent = cfg_.max_context_extent(cfg_.patch_size);
    const Rect ctx = centered_rect(out_rect, extent, extent);
    const auto psvs = build_psv(source_views(scene, d.sources), target_cam,
                                sampling_, ctx);
    TrainingSample sample;
    sample.inputs = multires_preprocess<float>(psvs, out_rect, cfg_);
    sample.target = rgb_tensor_crop(scene.images.at(d.target_view), out_rect);
    sample.meta = d;
    return sample;
  }

 private:
  // Views within the baseline window, sorted by (distance, index).
  std::vector<int> candidate_sources(const SceneData& scene, int target) const {
    const Vec3 tc = scene.cameras.at(target).center();
    std::vector<std::pair<double, int>> c;
    for (int v = 0; v < scene.view_count(); ++v) {
      if (v == target) continue;
      const double dist = (scene.cameras[v].center() - tc).norm();
      if (dist <= policy_.max_baseline) c.emplace_back(dist, v);
    }
    std::sort(c.begin(), c.end());
    std::vector<int> out;
    out.reserve(c.size());
    for (const auto& [dist, v] : c) out.push_back(v);
    return out;
  }

  const std::vector<SceneData>* scenes_;
  SamplePolicy policy_;
  DepthSampling sampling_;
  TowerConfig cfg_;
  Rng rng_;
  std::vector<std::pair<int, std::vector<int>>> usable_;
};

// Draws `size` descriptors sequentially, then builds them (parallelizable
// without affecting determinism because build() is pure).
inline std::vector<TrainingSample> make_minibatch(SampleStream& stream, int size,
                                                  int threads = 0) {
  if (size < 1) throw std::invalid_argument("minibatch size must be >= 1");
  std::vector<SampleDescriptor> descs(static_cast<std::size_t>(size));
  for (auto& d : descs) d = stream.next();
  std::vector<TrainingSample> samples(descs.size());
  parallel_for(size, threads,
               [&](int i) { samples[static_cast<std::size_t>(i)] = stream.build(descs[static_cast<std::size_t>(i)]); });
  return samples;
}

// --- loss / gradients -------------------------------------------------------

struct SampleGrad {
  float loss = 0;
  ParamMap<float> grads;
};

inline SampleGrad sample_forward_backward(const TrainingSample& sample,
                                          const ParamMap<float>& params,
                                          const TowerConfig& cfg) {
  Graph<float> g;
  const auto ids = register_parameters(g, params);
  const auto nodes = build_forward(g, sample.inputs, ids, cfg);
  const auto loss = g.l1_loss(nodes.output, g.constant(sample.target));
  SampleGrad out;
  out.loss = g.value(loss)[0];
  out.grads = g.backward(loss);
  return out;
}

// Sum of per-sample losses and gradients. Per-sample losses are float and
// accumulate exactly in double, so the batch loss is independent of sample
// order; gradients accumulate in fixed index order.
struct BatchGrad {
  double loss = 0;
  ParamMap<float> grads;
};

inline BatchGrad batch_forward_backward(const std::vector<TrainingSample>& samples,
                                        const ParamMap<float>& params,
                                        const TowerConfig& cfg, int threads = 0) {
  std::vector<SampleGrad> per(samples.size());
  parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    per[static_cast<std::size_t>(i)] =
        sample_forward_backward(samples[static_cast<std::size_t>(i)], params, cfg);
  });
  BatchGrad out;
  for (auto& s : per) {
    out.loss += static_cast<double>(s.loss);
    if (out.grads.empty()) {
      out.grads = std::move(s.grads);
    } else {
      for (auto& [name, g] : out.grads) {
        const Tensor<float>& add = s.grads.at(name);
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += add[i];
      }
    }
  }
  return out;
}

// --- Adagrad ----------------------------------------------------------------

template <typename T>
struct AdagradStateT {
  T lr = T(5e-4);
  T eps = T(1e-8);
  std::map<std::string, Tensor<T>> accum;  // same shapes as parameters
};

using AdagradState = AdagradStateT<float>;

// Per element: acc += g^2; p -= lr * g / (sqrt(acc) + eps).
// Validates every gradient before touching any state, so a failed step
// leaves parameters and accumulators untouched.
template <typename T>
void adagrad_step(ParamMap<T>& params, const ParamMap<T>& grads,
                  AdagradStateT<T>& state) {
  for (const auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end())
      throw std::invalid_argument("adagrad: missing gradient for " + name);
    if (!it->second.same_shape(p))
      throw std::invalid_argument("adagrad: gradient shape mismatch for " + name);
    if (!it->second.all_finite())
      throw std::runtime_error("adagrad: non-finite gradient for parameter '" +
                               name + "'; step aborted");
  }
  for (auto& [name, p] : params) {
    const Tensor<T>& g = grads.at(name);
    auto acc_it = state.accum.find(name);
    if (acc_it == state.accum.end())
      acc_it = state.accum.emplace(name, Tensor<T>(p.shape())).first;
    Tensor<T>& acc = acc_it->second;
    for (std::int64_t i = 0; i < p.size(); ++i) {
      acc[i] += g[i] * g[i];
      p[i] -= state.lr * g[i] / (std::sqrt(acc[i]) + state.eps);
    }
  }
}

// --- checkpoints -------------------------------------------------------------
//
// Binary layout: magic "DSWT", u16 format version, length-prefixed UTF-8
// config blob (JSON: architecture plus a "trainer" object holding step, lr,
// eps and the RNG state), u32 array count, then per array: length-prefixed
// name, u32 rank, u32 dims, little-endian binary32 data. Parameter arrays
// keep their own names; Adagrad accumulators are stored as "adagrad/<name>".

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  nlohmann::json config;  // architecture + run configuration
  ParamMap<float> params;
  ParamMap<float> accum;
  std::uint64_t step = 0;
  Rng::State rng_state{};
  double lr = 5e-4;
  double eps = 1e-8;
};

namespace detail {

inline void write_u16(std::ostream& out, std::uint16_t v) {
  out.write(reinterpret_cast<const char*>(&v), 2);
}
inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_str(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void write_array(std::ostream& out, const std::string& name,
                        const Tensor<float>& t) {
  write_str(out, name);
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
}

inline void read_exact(std::istream& in, char* dst, std::streamsize n,
                       const char* what) {
  in.read(dst, n);
  if (in.gcount() != n)
    throw std::runtime_error(std::string("checkpoint: truncated ") + what);
}
inline std::uint16_t read_u16(std::istream& in, const char* what) {
  std::uint16_t v;
  read_exact(in, reinterpret_cast<char*>(&v), 2, what);
  return v;
}
inline std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v;
  read_exact(in, reinterpret_cast<char*>(&v), 4, what);
  return v;
}
inline std::string read_str(std::istream& in, const char* what) {
  const std::uint32_t n = read_u32(in, what);
  if (n > (1u << 26)) throw std::runtime_error("checkpoint: implausible string");
  std::string s(n, '\0');
  read_exact(in, s.data(), n, what);
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write("DSWT", 4);
  detail::write_u16(out, cp.version);

  nlohmann::json blob = cp.config;
  nlohmann::json rng = nlohmann::json::array();
  for (std::uint64_t w : cp.rng_state) rng.push_back(to_hex(w));
  blob["trainer"] = {{"step", cp.step}, {"lr", cp.lr}, {"eps", cp.eps},
                     {"rng", rng}};
  detail::write_str(out, blob.dump());

  detail::write_u32(out,
                    static_cast<std::uint32_t>(cp.params.size() + cp.accum.size()));
  for (const auto& [name, t] : cp.params) detail::write_array(out, name, t);
  for (const auto& [name, t] : cp.accum)
    detail::write_array(out, "adagrad/" + name, t);
  if (!out) throw std::runtime_error("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  char magic[4];
  detail::read_exact(in, magic, 4, "magic");
  if (std::memcmp(magic, "DSWT", 4) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  Checkpoint cp;
  cp.version = detail::read_u16(in, "version");
  if (cp.version != kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(cp.version));
  cp.config = nlohmann::json::parse(detail::read_str(in, "config blob"));
  const auto trainer = cp.config.at("trainer");
  cp.step = trainer.at("step").get<std::uint64_t>();
  cp.lr = trainer.at("lr").get<double>();
  cp.eps = trainer.at("eps").get<double>();
  const auto rng = trainer.at("rng");
  for (std::size_t i = 0; i < 4; ++i)
    cp.rng_state[i] = from_hex(rng.at(i).get<std::string>());
  cp.config.erase("trainer");

  const std::uint32_t count = detail::read_u32(in, "array count");
  for (std::uint32_t a = 0; a < count; ++a) {
    const std::string name = detail::read_str(in, "array name");
    const std::uint32_t rank = detail::read_u32(in, "array rank");
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank");
    Shape shape(rank);
    for (auto& d : shape)
      d = static_cast<int>(detail::read_u32(in, "array dims"));
    Tensor<float> t(shape);
    detail::read_exact(in, reinterpret_cast<char*>(t.data()),
                       static_cast<std::streamsize>(t.size() * sizeof(float)),
                       "array data");
    if (name.rfind("adagrad/", 0) == 0)
      cp.accum.emplace(name.substr(8), std::move(t));
    else
      cp.params.emplace(name, std::move(t));
  }
  return cp;
}

// --- training loop ------------------------------------------------------------

struct EvalView {
  int scene = 0;
  int view = 0;
};

struct TrainOptions {
  int batch = 32;
  std::uint64_t steps = 1000;
  double lr = 5e-4;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  int threads = 0;
  std::uint64_t checkpoint_every = 0;  // 0: final checkpoint only
  // Optional PSNR-based early stop, evaluated deterministically every
  // eval_every steps on the listed held-out views.
  std::uint64_t eval_every = 0;
  double stop_psnr = 0;
  std::vector<EvalView> eval_views;
};

struct TrainResult {
  std::uint64_t final_step = 0;
  double final_loss = 0;
  double final_psnr = -1;  // -1: never evaluated
  std::string checkpoint_path;
};

inline double eval_psnr(const std::vector<SceneData>& scenes,
                        const std::vector<EvalView>& views,
                        const ParamMap<float>& params, const TowerConfig& cfg,
                        const DepthSampling& sampling, const SamplePolicy& policy,
                        int threads) {
  double sum = 0;
  for (const auto& ev : views) {
    const SceneData& scene = scenes.at(static_cast<std::size_t>(ev.scene));
    const auto src = pick_sources(scene, ev.view, policy.source_count,
                                  policy.max_baseline);
    if (static_cast<int>(src.size()) != policy.source_count)
      throw std::runtime_error("eval view lacks sources");
    RenderOptions opt;
    opt.threads = threads;
    const auto result = render_frame(source_views(scene, src),
                                     scene.cameras.at(ev.view), params, cfg,
                                     sampling, opt);
    sum += psnr(result.image, rgb_tensor(scene.images.at(ev.view)));
  }
  return sum / static_cast<double>(views.size());
}

// Runs sample -> forward -> L1 -> backward -> Adagrad for opt.steps steps,
// logging per-step loss to loss.csv and writing checkpoints at step
// boundaries. Fully resumable: a run continued from a checkpoint replays
// exactly as the unbroken run would.
inline TrainResult train(const std::vector<SceneData>& scenes,
                         const TowerConfig& cfg, const DepthSampling& sampling,
                         const SamplePolicy& policy, const TrainOptions& opt,
                         const std::string& out_dir,
                         const nlohmann::json& run_config = nlohmann::json::object(),
                         const Checkpoint* resume = nullptr) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(out_dir);

  ParamMap<float> params;
  AdagradState state;
  state.lr = static_cast<float>(opt.lr);
  state.eps = static_cast<float>(opt.eps);
  std::uint64_t start_step = 0;
  Rng rng(opt.seed);

  nlohmann::json config = run_config;
  config["arch"] = cfg;
  config["source_order"] = "signed_x_offset";

  if (resume) {
    if (resume->config.at("arch") != config.at("arch"))
      throw std::runtime_error("resume: architecture config mismatch");
    params = resume->params;
    state.accum = resume->accum;
    state.lr = static_cast<float>(resume->lr);
    state.eps = static_cast<float>(resume->eps);
    start_step = resume->step;
    rng = Rng::from_state(resume->rng_state);
  } else {
    params = init_params(cfg, rng);
  }

  SampleStream stream(&scenes, policy, sampling, cfg, rng);

  std::ofstream log(out_dir + "/loss.csv",
                    resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + out_dir + "/loss.csv");
  if (!resume) log << "step,loss,wall_ms\n";

  const auto snapshot = [&](std::uint64_t step) {
    Checkpoint cp;
    cp.config = config;
    cp.params = params;
    cp.accum = state.accum;
    cp.step = step;
    cp.rng_state = stream.rng().state();
    cp.lr = state.lr;
    cp.eps = state.eps;
    return cp;
  };

  TrainResult result;
  result.final_step = start_step;
  double last_loss = 0;
  for (std::uint64_t step = start_step + 1; step <= opt.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto samples = make_minibatch(stream, opt.batch, opt.threads);
    auto batch = batch_forward_backward(samples, params, cfg, opt.threads);
    adagrad_step(params, batch.grads, state);
    const auto t1 = std::chrono::steady_clock::now();
    const double wall_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    log << step << "," << batch.loss << "," << wall_ms << "\n";
    last_loss = batch.loss;
    result.final_step = step;

    if (opt.checkpoint_every && step % opt.checkpoint_every == 0 &&
        step != opt.steps) {
      char name[40];
      std::snprintf(name, sizeof name, "ckpt_%08llu.dswt",
                    static_cast<unsigned long long>(step));
      save_checkpoint(out_dir + "/" + name, snapshot(step));
    }
    if (opt.eval_every && !opt.eval_views.empty() &&
        step % opt.eval_every == 0) {
      result.final_psnr = eval_psnr(scenes, opt.eval_views, params, cfg,
                                    sampling, policy, opt.threads);
      log << std::flush;
      std::cerr << "step " << step << " loss " << batch.loss << " eval psnr "
                << result.final_psnr << "\n";
      if (opt.stop_psnr > 0 && result.final_psnr >= opt.stop_psnr) break;
    }
  }

  result.final_loss = last_loss;
  result.checkpoint_path = out_dir + "/ckpt_final.dswt";
  save_checkpoint(result.checkpoint_path, snapshot(result.final_step));
  return result;
}

}  // namespace viewsynth
