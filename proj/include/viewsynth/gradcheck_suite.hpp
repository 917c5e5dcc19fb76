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

#include <functional>
#include <string>
#include <vector>

#include "viewsynth/autodiff.hpp"
#include "viewsynth/network.hpp"
#include "viewsynth/rng.hpp"

namespace viewsynth {

// Central-difference verification of every differentiable op plus the full
// two-tower graph, all in double precision. Random draws resample away from
// non-differentiable loci (relu kinks, L1 ties).

struct GradCheckCase {
  std::string name;
  double tolerance;
  std::function<GradCheckReport(Rng&)> run;
};

namespace detail {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1,
                                    double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Uniform in [-1,1] staying at least `margin` away from zero.
inline Tensor<double> random_away_from_zero(Shape shape, Rng& rng,
                                            double margin) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) {
    double v;
    do {
      v = rng.uniform(-1, 1);
    } while (std::abs(v) < margin);
    t[i] = v;
  }
  return t;
}

// Scalar loss <w, y> + const via |w*y - big|: a random linear functional of
// the op output. Smooth everywhere our op outputs can reach (|y| stays far
// below the offset), and the random weights expose gradients that a uniform
// functional would let cancel.
template <typename G, typename Rng>
struct LinearProbe {
  Tensor<double> weights;
  LinearProbe(Shape out_shape, Rng& rng)
      : weights(random_tensor(out_shape, rng, 0.5, 1.5)) {}
  typename G::NodeId attach(G& g, typename G::NodeId y) const {
    auto weighted = g.eltwise_mul(y, g.constant(weights));
    return g.l1_loss(weighted,
                     g.constant(Tensor<double>::full(weights.shape(), 100.0)));
  }
};

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_suite() {
  using G = Graph<double>;
  using Ids = std::map<std::string, G::NodeId>;
  using Probe = detail::LinearProbe<G, Rng>;
  std::vector<GradCheckCase> cases;

  cases.push_back({"conv2d", 1e-4, [](Rng& rng) {
    std::map<std::string, Tensor<double>> leaves;
    leaves["x"] = detail::random_tensor({2, 5, 6}, rng);
    leaves["w"] = detail::random_tensor({3, 2, 3, 3}, rng);
    leaves["b"] = detail::random_tensor({3}, rng);
    const Probe probe({3, 3, 4}, rng);
    return grad_check("conv2d", leaves, [&](G& g, const Ids& p) {
      return probe.attach(g, g.conv2d(p.at("x"), p.at("w"), p.at("b")));
    });
  }});

  cases.push_back({"conv2d_batched", 1e-4, [](Rng& rng) {
    std::map<std::string, Tensor<double>> leaves;
    leaves["x"] = detail::random_tensor({3, 2, 4, 4}, rng);
    leaves["w"] = detail::random_tensor({2, 2, 3, 3}, rng);
    leaves["b"] = detail::random_tensor({2}, rng);
    const Probe probe({3, 2, 2, 2}, rng);
    return grad_check("conv2d_batched", leaves, [&](G& g, const Ids& p) {
      return probe.attach(g, g.conv2d(p.at("x"), p.at("w"), p.at("b")));
    });
  }});

  cases.push_back({"relu", 1e-4, [](Rng& rng) {
    std::map<std::string, Tensor<double>> leaves;
    leaves["x"] = detail::random_away_from_zero({3, 4}, rng, 0.05);
    const Probe probe({3, 4}, rng);
    return grad_check("relu", leaves, [&](G& g, const Ids& p) {
      return probe.attach(g, g.relu(p.at("x")));
    });
  }});

  cases.push_back({"tanh_act", 1e-4, [](Rng& rng) {
    std::map<std::string, Tensor<double>> leaves;
    leaves["x"] = detail::random_tensor({3, 4}, rng);
    const Probe probe({3, 4}, rng);
    return grad_check("tanh_act", leaves, [&](G& g, const Ids& p) {
      return probe.attach(g, g.tanh_act(p.at("x")));
    });
  }});

  cases.push_back({"softmax_over_axis", 1e-4, [](Rng& rng) {
    std::map<std::string, Tensor<double>> leaves;
    leaves["x"] = detail::random_tensor({2, 4, 3}, rng);
    const Probe probe({2, 4, 3}, rng);
    return grad_check("softmax_over_axis", leaves, [&](G& g, const Ids& p) {
      return probe.attach(g, g.softmax_over_axis(p.at("x"), 1));
    });
  }});

  cases.push_back({"eltwise_mul", 1e-4, [](Rng& rng) {
    std::map<std::string, Tensor<double>> leaves;
    leaves["a"] = detail::random_tensor({2, 1, 3}, rng);
    leaves["b"] = detail::random_tensor({2, 4, 3}, rng);
    const Probe probe({2, 4, 3}, rng);
    return grad_check("eltwise_mul", leaves, [&](G& g, const Ids& p) {
      return probe.attach(g, g.eltwise_mul(p.at("a"), p.at("b")));
    });
  }});

  cases.push_back({"sum_over_axis", 1e-4, [](Rng& rng) {
    std::map<std::string, Tensor<double>> leaves;
    leaves["x"] = detail::random_tensor({2, 3, 4}, rng);
    const Probe probe({2, 4}, rng);
    return grad_check("sum_over_axis", leaves, [&](G& g, const Ids& p) {
      return probe.attach(g, g.sum_over_axis(p.at("x"), 1));
    });
  }});

  cases.push_back({"concat", 1e-4, [](Rng& rng) {
    std::map<std::string, Tensor<double>> leaves;
    leaves["a"] = detail::random_tensor({2, 2, 3}, rng);
    leaves["b"] = detail::random_tensor({2, 1, 3}, rng);
    leaves["c"] = detail::random_tensor({2, 3, 3}, rng);
    const Probe probe({2, 6, 3}, rng);
    return grad_check("concat", leaves, [&](G& g, const Ids& p) {
      return probe.attach(g, g.concat({p.at("a"), p.at("b"), p.at("c")}, 1));
    });
  }});

  cases.push_back({"upsample_nearest", 1e-4, [](Rng& rng) {
    std::map<std::string, Tensor<double>> leaves;
    leaves["x"] = detail::random_tensor({2, 3, 3}, rng);
    const Probe probe({2, 6, 6}, rng);
    return grad_check("upsample_nearest", leaves, [&](G& g, const Ids& p) {
      return probe.attach(g, g.upsample_nearest(p.at("x"), 2));
    });
  }});

  cases.push_back({"l1_loss", 1e-4, [](Rng& rng) {
    // Subgradient check away from ties: |pred - 0| >= 0.05 everywhere.
    std::map<std::string, Tensor<double>> leaves;
    leaves["pred"] = detail::random_away_from_zero({3, 4}, rng, 0.05);
    return grad_check("l1_loss", leaves, [](G& g, const Ids& p) {
      return g.l1_loss(p.at("pred"), g.constant(Tensor<double>({3, 4})));
    });
  }});

  // End-to-end: every parameter of the tiny two-tower graph, through the
  // actual training loss. The target sits a fixed margin away from the
  // forward output so no element is at an L1 tie.
  cases.push_back({"full_model", 1e-3, [](Rng& rng) {
    const TowerConfig cfg = TowerConfig::tiny();
    Rng prng(rng.next());
    const ParamMap<float> fparams = init_params(cfg, prng);
    std::map<std::string, Tensor<double>> leaves;
    for (const auto& [name, t] : fparams) {
      // Perturb the zero-initialized layer too so its gradient is generic.
      Tensor<double> d = t.cast<double>();
      for (std::int64_t i = 0; i < d.size(); ++i)
        d[i] += rng.uniform(-0.05, 0.05);
      leaves[name] = d;
    }
    PatchInputs<double> in;
    const int n0 = cfg.pathway_input_size(0, cfg.patch_size);
    in.pathways.push_back(detail::random_tensor(
        {cfg.depth_planes, cfg.input_channels(), n0, n0}, rng, 0, 1));

    const Tensor<double> ref = forward(in, leaves, cfg).image;
    Tensor<double> target = ref;
    for (std::int64_t i = 0; i < target.size(); ++i) {
      const double margin = rng.uniform(0.1, 0.3);
      target[i] += rng.uniform() < 0.5 ? -margin : margin;
    }
    return grad_check("full_model", leaves, [&, target](G& g, const Ids& p) {
      const auto nodes = build_forward(g, in, p, cfg);
      return g.l1_loss(nodes.output, g.constant(target));
    });
  }});

  return cases;
}

struct GradCheckOutcome {
  std::string name;
  double tolerance;
  GradCheckReport report;
  bool passed;
};

// Runs each case at `points` random draws (full_model runs once; it is the
// expensive one) and keeps the worst report.
inline std::vector<GradCheckOutcome> run_gradcheck_suite(
    std::uint64_t seed, const std::string& only = "",
    double tolerance_override = -1, int points = 5) {
  std::vector<GradCheckOutcome> out;
  Rng rng(seed);
  for (const auto& c : gradcheck_suite()) {
    if (!only.empty() && c.name != only) continue;
    const int n = c.name == "full_model" ? 1 : points;
    GradCheckReport worst;
    worst.op_name = c.name;
    for (int i = 0; i < n; ++i) {
      const GradCheckReport r = c.run(rng);
      if (r.max_rel_err >= worst.max_rel_err) worst = r;
    }
    const double tol = tolerance_override >= 0 ? tolerance_override : c.tolerance;
    out.push_back({c.name, tol, worst, worst.passed(tol)});
  }
  return out;
}

}  // namespace viewsynth
