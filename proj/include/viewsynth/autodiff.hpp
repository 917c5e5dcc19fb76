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
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "viewsynth/tensor.hpp"

namespace viewsynth {

// Reverse-mode tape. Ops evaluate eagerly and record a backward closure;
// nodes are therefore already in topological order and backward() is a single
// reverse sweep. One Graph per forward pass, one thread per Graph.
//
// Convolutions are valid-mode (no padding), stride 1 only: output patches can
// then be tiled without border effects. Values are checked finite when they
// enter the graph as leaves; interior ops assume finite inputs.
template <typename T>
class Graph {
 public:
  using NodeId = int;
  using GradMap = std::map<std::string, Tensor<T>>;

  // --- leaves ---------------------------------------------------------------

  NodeId constant(Tensor<T> value) {
    require_finite(value, "constant");
    return add_node(std::move(value), {}, nullptr, false);
  }

  NodeId parameter(const std::string& name, Tensor<T> value) {
    require_finite(value, "parameter " + name);
    if (param_ids_.count(name))
      throw std::invalid_argument("duplicate parameter name: " + name);
    const NodeId id = add_node(std::move(value), {}, nullptr, true);
    nodes_[id].param_name = name;
    param_ids_[name] = id;
    return id;
  }

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  std::size_t node_count() const { return nodes_.size(); }
  const std::map<std::string, NodeId>& parameters() const { return param_ids_; }

  // --- ops --------------------------------------------------------------

  // x: [C,H,W] or [N,C,H,W]; w: [C_out,C_in,kh,kw]; b: [C_out].
  // Cross-correlation, valid mode, stride 1. A leading N axis runs the same
  // kernel over N independent planes (used for weight sharing across sweep
  // planes).
  NodeId conv2d(NodeId x, NodeId w, NodeId b) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    const bool batched = xv.rank() == 4;
    if (!batched && xv.rank() != 3)
      throw std::invalid_argument("conv2d: input must be rank 3 or 4, got " +
                                  shape_str(xv.shape()));
    if (wv.rank() != 4)
      throw std::invalid_argument("conv2d: weights must be [Cout,Cin,kh,kw]");
    const int n = batched ? xv.dim(0) : 1;
    const int cin = xv.dim(batched ? 1 : 0);
    const int hh = xv.dim(batched ? 2 : 1);
    const int ww = xv.dim(batched ? 3 : 2);
    const int cout = wv.dim(0);
    const int kh = wv.dim(2);
    const int kw = wv.dim(3);
    if (wv.dim(1) != cin)
      throw std::invalid_argument("conv2d: weight C_in " + std::to_string(wv.dim(1)) +
                                  " does not match input channels " + std::to_string(cin));
    if (bv.rank() != 1 || bv.dim(0) != cout)
      throw std::invalid_argument("conv2d: bias must be [C_out]");
    if (kh > hh || kw > ww)
      throw std::invalid_argument("conv2d: kernel larger than input");
    const int oh = hh - kh + 1;
    const int ow = ww - kw + 1;

    Shape out_shape = batched ? Shape{n, cout, oh, ow} : Shape{cout, oh, ow};
    Tensor<T> out(out_shape);
    {
      Mat col(static_cast<Eigen::Index>(cin) * kh * kw,
              static_cast<Eigen::Index>(oh) * ow);
      ConstMatMap wm(wv.data(), cout, static_cast<Eigen::Index>(cin) * kh * kw);
      for (int i = 0; i < n; ++i) {
        im2col(xv.data() + slab(i, cin, hh, ww), cin, hh, ww, kh, kw, col);
        MatMap om(out.data() + slab(i, cout, oh, ow), cout,
                  static_cast<Eigen::Index>(oh) * ow);
        om.noalias() = wm * col;
        for (int c = 0; c < cout; ++c) om.row(c).array() += bv[c];
      }
    }

    return add_node(std::move(out), {x, w, b},
                    [n, cin, hh, ww, cout, kh, kw, oh, ow](
                        Graph& g, const Tensor<T>& gout, const Node& node) {
                      g.conv2d_backward(node, gout, n, cin, hh, ww, cout, kh,
                                        kw, oh, ow);
                    });
  }

  NodeId relu(NodeId x) {
    const Tensor<T>& xv = value(x);
    Tensor<T> out(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i)
      out[i] = xv[i] > T(0) ? xv[i] : T(0);
    return add_node(std::move(out), {x},
                    [](Graph& g, const Tensor<T>& gout, const Node& node) {
                      const Tensor<T>& in = g.value(node.inputs[0]);
                      Tensor<T> gx(in.shape());
                      for (std::int64_t i = 0; i < in.size(); ++i)
                        gx[i] = in[i] > T(0) ? gout[i] : T(0);
                      g.accumulate(node.inputs[0], std::move(gx));
                    });
  }

  NodeId tanh_act(NodeId x) {
    const Tensor<T>& xv = value(x);
    Tensor<T> out(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i)
      out[i] = std::tanh(xv[i]);
    return add_node(std::move(out), {x},
                    [](Graph& g, const Tensor<T>& gout, const Node& node) {
                      const Tensor<T>& y = node.value;
                      Tensor<T> gx(y.shape());
                      for (std::int64_t i = 0; i < y.size(); ++i)
                        gx[i] = gout[i] * (T(1) - y[i] * y[i]);
                      g.accumulate(node.inputs[0], std::move(gx));
                    });
  }

  // Exp-normalizes along `axis` with max subtraction; slices sum to 1.
  NodeId softmax_over_axis(NodeId x, int axis) {
    const Tensor<T>& xv = value(x);
    check_axis(xv, axis, "softmax_over_axis");
    Tensor<T> out(xv.shape());
    const std::int64_t outer = xv.numel_to(axis);
    const std::int64_t len = xv.dim(axis);
    const std::int64_t inner = xv.numel_from(axis + 1);
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * len * inner + i;
        T mx = xv[base];
        for (std::int64_t j = 1; j < len; ++j)
          mx = std::max(mx, xv[base + j * inner]);
        T sum = T(0);
        for (std::int64_t j = 0; j < len; ++j) {
          const T e = std::exp(xv[base + j * inner] - mx);
          out[base + j * inner] = e;
          sum += e;
        }
        for (std::int64_t j = 0; j < len; ++j) out[base + j * inner] /= sum;
      }
    }
    return add_node(
        std::move(out), {x},
        [axis](Graph& g, const Tensor<T>& gout, const Node& node) {
          const Tensor<T>& y = node.value;
          Tensor<T> gx(y.shape());
          const std::int64_t outer = y.numel_to(axis);
          const std::int64_t len = y.dim(axis);
          const std::int64_t inner = y.numel_from(axis + 1);
          for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t i = 0; i < inner; ++i) {
              const std::int64_t base = o * len * inner + i;
              T dot = T(0);
              for (std::int64_t j = 0; j < len; ++j)
                dot += gout[base + j * inner] * y[base + j * inner];
              for (std::int64_t j = 0; j < len; ++j) {
                const std::int64_t k = base + j * inner;
                gx[k] = y[k] * (gout[k] - dot);
              }
            }
          }
          g.accumulate(node.inputs[0], std::move(gx));
        });
  }

  // Elementwise product. Ranks must match; each dim must be equal or 1 on one
  // side (a size-1 dim broadcasts, e.g. a single-channel weight against RGB).
  NodeId eltwise_mul(NodeId a, NodeId b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
    Tensor<T> out(out_shape);
    broadcast_binary(out, av, bv,
                     [](T x, T y) { return x * y; });
    return add_node(std::move(out), {a, b},
                    [](Graph& g, const Tensor<T>& gout, const Node& node) {
                      const Tensor<T>& av = g.value(node.inputs[0]);
                      const Tensor<T>& bv = g.value(node.inputs[1]);
                      if (g.wants_grad(node.inputs[0])) {
                        Tensor<T> ga(av.shape());
                        reduce_product_grad(ga, gout, bv);
                        g.accumulate(node.inputs[0], std::move(ga));
                      }
                      if (g.wants_grad(node.inputs[1])) {
                        Tensor<T> gb(bv.shape());
                        reduce_product_grad(gb, gout, av);
                        g.accumulate(node.inputs[1], std::move(gb));
                      }
                    });
  }

  // Sums out `axis` (rank drops by one).
  NodeId sum_over_axis(NodeId x, int axis) {
    const Tensor<T>& xv = value(x);
    check_axis(xv, axis, "sum_over_axis");
    Shape out_shape = xv.shape();
    out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape = {1};
    Tensor<T> out(out_shape);
    const std::int64_t outer = xv.numel_to(axis);
    const std::int64_t len = xv.dim(axis);
    const std::int64_t inner = xv.numel_from(axis + 1);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t j = 0; j < len; ++j) {
        const T* src = xv.data() + (o * len + j) * inner;
        T* dst = out.data() + o * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    return add_node(std::move(out), {x},
                    [axis](Graph& g, const Tensor<T>& gout, const Node& node) {
                      const Tensor<T>& xv = g.value(node.inputs[0]);
                      Tensor<T> gx(xv.shape());
                      const std::int64_t outer = xv.numel_to(axis);
                      const std::int64_t len = xv.dim(axis);
                      const std::int64_t inner = xv.numel_from(axis + 1);
                      for (std::int64_t o = 0; o < outer; ++o)
                        for (std::int64_t j = 0; j < len; ++j) {
                          T* dst = gx.data() + (o * len + j) * inner;
                          const T* src = gout.data() + o * inner;
                          for (std::int64_t i = 0; i < inner; ++i) dst[i] = src[i];
                        }
                      g.accumulate(node.inputs[0], std::move(gx));
                    });
  }

  NodeId concat(const std::vector<NodeId>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    const Tensor<T>& first = value(xs[0]);
    check_axis(first, axis, "concat");
    Shape out_shape = first.shape();
    int total = 0;
    for (NodeId id : xs) {
      const Tensor<T>& v = value(id);
      if (v.rank() != first.rank())
        throw std::invalid_argument("concat: rank mismatch");
      for (int d = 0; d < v.rank(); ++d)
        if (d != axis && v.dim(d) != first.dim(d))
          throw std::invalid_argument("concat: shape mismatch off-axis");
      total += v.dim(axis);
    }
    out_shape[axis] = total;
    Tensor<T> out(out_shape);
    const std::int64_t outer = first.numel_to(axis);
    const std::int64_t inner = first.numel_from(axis + 1);
    std::int64_t off = 0;
    for (NodeId id : xs) {
      const Tensor<T>& v = value(id);
      const std::int64_t len = v.dim(axis);
      for (std::int64_t o = 0; o < outer; ++o)
        std::copy(v.data() + o * len * inner, v.data() + (o + 1) * len * inner,
                  out.data() + (o * total + off) * inner);
      off += len;
    }
    return add_node(std::move(out), xs,
                    [axis, total](Graph& g, const Tensor<T>& gout, const Node& node) {
                      const std::int64_t outer = node.value.numel_to(axis);
                      const std::int64_t inner = node.value.numel_from(axis + 1);
                      std::int64_t off = 0;
                      for (NodeId id : node.inputs) {
                        const Tensor<T>& v = g.value(id);
                        const std::int64_t len = v.dim(axis);
                        if (g.wants_grad(id)) {
                          Tensor<T> gx(v.shape());
                          for (std::int64_t o = 0; o < outer; ++o)
                            std::copy(gout.data() + (o * total + off) * inner,
                                      gout.data() + (o * total + off + len) * inner,
                                      gx.data() + o * len * inner);
                          g.accumulate(id, std::move(gx));
                        }
                        off += len;
                      }
                    });
  }

  // Repeats each pixel factor x factor on the last two axes.
  NodeId upsample_nearest(NodeId x, int factor) {
    const Tensor<T>& xv = value(x);
    if (xv.rank() < 2)
      throw std::invalid_argument("upsample_nearest: rank must be >= 2");
    if (factor < 1) throw std::invalid_argument("upsample_nearest: factor >= 1");
    const int hh = xv.dim(xv.rank() - 2);
    const int ww = xv.dim(xv.rank() - 1);
    Shape out_shape = xv.shape();
    out_shape[out_shape.size() - 2] = hh * factor;
    out_shape[out_shape.size() - 1] = ww * factor;
    Tensor<T> out(out_shape);
    const std::int64_t maps = xv.numel_to(xv.rank() - 2);
    for (std::int64_t m = 0; m < maps; ++m) {
      const T* src = xv.data() + m * hh * ww;
      T* dst = out.data() + m * static_cast<std::int64_t>(hh) * ww * factor * factor;
      for (int y = 0; y < hh * factor; ++y)
        for (int x2 = 0; x2 < ww * factor; ++x2)
          dst[static_cast<std::int64_t>(y) * ww * factor + x2] =
              src[static_cast<std::int64_t>(y / factor) * ww + x2 / factor];
    }
    return add_node(
        std::move(out), {x},
        [factor, hh, ww](Graph& g, const Tensor<T>& gout, const Node& node) {
          const Tensor<T>& xv = g.value(node.inputs[0]);
          Tensor<T> gx(xv.shape());
          const std::int64_t maps = xv.numel_to(xv.rank() - 2);
          for (std::int64_t m = 0; m < maps; ++m) {
            const T* src = gout.data() + m * static_cast<std::int64_t>(hh) * ww * factor * factor;
            T* dst = gx.data() + m * hh * ww;
            for (int y = 0; y < hh * factor; ++y)
              for (int x2 = 0; x2 < ww * factor; ++x2)
                dst[static_cast<std::int64_t>(y / factor) * ww + x2 / factor] +=
                    src[static_cast<std::int64_t>(y) * ww * factor + x2];
          }
          g.accumulate(node.inputs[0], std::move(gx));
        });
  }

  NodeId reshape(NodeId x, Shape s) {
    Tensor<T> out = value(x).reshaped(s);
    return add_node(std::move(out), {x},
                    [](Graph& g, const Tensor<T>& gout, const Node& node) {
                      g.accumulate(node.inputs[0],
                                   gout.reshaped(g.value(node.inputs[0]).shape()));
                    });
  }

  // Sum of absolute differences over all elements; scalar output.
  NodeId l1_loss(NodeId pred, NodeId target) {
    const Tensor<T>& pv = value(pred);
    const Tensor<T>& tv = value(target);
    if (!pv.same_shape(tv))
      throw std::invalid_argument("l1_loss: shape mismatch " +
                                  shape_str(pv.shape()) + " vs " +
                                  shape_str(tv.shape()));
    T sum = T(0);
    for (std::int64_t i = 0; i < pv.size(); ++i) sum += std::abs(pv[i] - tv[i]);
    Tensor<T> out = Tensor<T>::scalar(sum);
    require_finite(out, "l1_loss output");
    return add_node(std::move(out), {pred, target},
                    [](Graph& g, const Tensor<T>& gout, const Node& node) {
                      const Tensor<T>& pv = g.value(node.inputs[0]);
                      const Tensor<T>& tv = g.value(node.inputs[1]);
                      const T g0 = gout[0];
                      auto sign_grad = [&](bool flip) {
                        Tensor<T> gx(pv.shape());
                        for (std::int64_t i = 0; i < pv.size(); ++i) {
                          const T d = pv[i] - tv[i];
                          const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                          gx[i] = (flip ? -s : s) * g0;
                        }
                        return gx;
                      };
                      if (g.wants_grad(node.inputs[0]))
                        g.accumulate(node.inputs[0], sign_grad(false));
                      if (g.wants_grad(node.inputs[1]))
                        g.accumulate(node.inputs[1], sign_grad(true));
                    });
  }

  // --- backward -------------------------------------------------------------

  // Reverse-topological sweep from a scalar loss. Returns a gradient for every
  // registered parameter; parameters the loss never touched get zeros.
  GradMap backward(NodeId loss) {
    if (value(loss).size() != 1)
      throw std::invalid_argument("backward: loss must be scalar");
    grads_.assign(nodes_.size(), Tensor<T>());
    if (nodes_[loss].needs_grad)
      grads_[loss] = Tensor<T>::full(value(loss).shape(), T(1));
    for (NodeId id = loss; id >= 0; --id) {
      Node& node = nodes_[id];
      if (!node.needs_grad || grads_[id].empty() || !node.back) continue;
      node.back(*this, grads_[id], node);
      grads_[id] = Tensor<T>();  // free as we go
    }
    GradMap out;
    for (const auto& [name, id] : param_ids_) {
      if (!grads_[id].empty())
        out.emplace(name, std::move(grads_[id]));
      else
        out.emplace(name, Tensor<T>(value(id).shape()));
    }
    grads_.clear();
    return out;
  }

 private:
  struct Node;
  using BackFn = std::function<void(Graph&, const Tensor<T>&, const Node&)>;

  struct Node {
    Tensor<T> value;
    std::vector<NodeId> inputs;
    BackFn back;
    bool needs_grad = false;
    std::string param_name;
  };

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;

  NodeId add_node(Tensor<T> value, std::vector<NodeId> inputs, BackFn back,
                  bool is_param = false) {
    Node node;
    node.value = std::move(value);
    node.inputs = std::move(inputs);
    node.back = std::move(back);
    node.needs_grad = is_param;
    for (NodeId in : node.inputs)
      node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  bool wants_grad(NodeId id) const { return nodes_[id].needs_grad; }

  void accumulate(NodeId id, Tensor<T> grad) {
    if (!nodes_[id].needs_grad) return;
    if (grads_[id].empty()) {
      grads_[id] = std::move(grad);
    } else {
      Tensor<T>& g = grads_[id];
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += grad[i];
    }
  }

  static void require_finite(const Tensor<T>& t, const std::string& what) {
    if (!t.all_finite())
      throw std::invalid_argument(what + ": non-finite values");
  }

  static void check_axis(const Tensor<T>& t, int axis, const char* op) {
    if (axis < 0 || axis >= t.rank())
      throw std::invalid_argument(std::string(op) + ": axis out of range");
  }

  static std::int64_t slab(int i, int c, int h, int w) {
    return static_cast<std::int64_t>(i) * c * h * w;
  }

  static void im2col(const T* x, int cin, int hh, int ww, int kh, int kw,
                     Mat& col) {
    const int oh = hh - kh + 1;
    const int ow = ww - kw + 1;
    for (int c = 0; c < cin; ++c)
      for (int di = 0; di < kh; ++di)
        for (int dj = 0; dj < kw; ++dj) {
          T* dst = col.data() + (static_cast<std::int64_t>((c * kh + di) * kw + dj)) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const T* src = x + (static_cast<std::int64_t>(c) * hh + oy + di) * ww + dj;
            std::copy(src, src + ow, dst + static_cast<std::int64_t>(oy) * ow);
          }
        }
  }

  static void col2im_add(const Mat& col, int cin, int hh, int ww, int kh,
                         int kw, T* gx) {
    const int oh = hh - kh + 1;
    const int ow = ww - kw + 1;
    for (int c = 0; c < cin; ++c)
      for (int di = 0; di < kh; ++di)
        for (int dj = 0; dj < kw; ++dj) {
          const T* src = col.data() + (static_cast<std::int64_t>((c * kh + di) * kw + dj)) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            T* dst = gx + (static_cast<std::int64_t>(c) * hh + oy + di) * ww + dj;
            const T* s = src + static_cast<std::int64_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) dst[ox] += s[ox];
          }
        }
  }

  void conv2d_backward(const Node& node, const Tensor<T>& gout, int n, int cin,
                       int hh, int ww, int cout, int kh, int kw, int oh,
                       int ow) {
    const NodeId x = node.inputs[0];
    const NodeId w = node.inputs[1];
    const NodeId b = node.inputs[2];
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const std::int64_t kdim = static_cast<std::int64_t>(cin) * kh * kw;
    const std::int64_t pdim = static_cast<std::int64_t>(oh) * ow;
    ConstMatMap wm(wv.data(), cout, kdim);

    const bool need_x = wants_grad(x);
    const bool need_w = wants_grad(w);
    const bool need_b = wants_grad(b);

    Tensor<T> gw(wv.shape());
    Tensor<T> gb(Shape{cout});
    Tensor<T> gx;
    if (need_x) gx = Tensor<T>(xv.shape());
    MatMap gwm(gw.data(), cout, kdim);

    Mat col(kdim, pdim);
    Mat colgrad(kdim, pdim);
    for (int i = 0; i < n; ++i) {
      ConstMatMap gym(gout.data() + slab(i, cout, oh, ow), cout, pdim);
      if (need_w) {
        im2col(xv.data() + slab(i, cin, hh, ww), cin, hh, ww, kh, kw, col);
        gwm.noalias() += gym * col.transpose();
      }
      if (need_b) {
        // Sequential sum: Eigen's vectorized redux orders terms by runtime
        // buffer alignment, which breaks bitwise reproducibility.
        const T* gbase = gout.data() + slab(i, cout, oh, ow);
        for (int c = 0; c < cout; ++c) {
          T s = T(0);
          const T* row = gbase + static_cast<std::int64_t>(c) * pdim;
          for (std::int64_t k = 0; k < pdim; ++k) s += row[k];
          gb[c] += s;
        }
      }
      if (need_x) {
        colgrad.noalias() = wm.transpose() * gym;
        col2im_add(colgrad, cin, hh, ww, kh, kw,
                   gx.data() + slab(i, cin, hh, ww));
      }
    }
    if (need_x) accumulate(x, std::move(gx));
    if (need_w) accumulate(w, std::move(gw));
    if (need_b) accumulate(b, std::move(gb));
  }

  static Shape broadcast_shape(const Shape& a, const Shape& b) {
    if (a.size() != b.size())
      throw std::invalid_argument("eltwise_mul: rank mismatch " + shape_str(a) +
                                  " vs " + shape_str(b));
    Shape out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] == b[i])
        out[i] = a[i];
      else if (a[i] == 1)
        out[i] = b[i];
      else if (b[i] == 1)
        out[i] = a[i];
      else
        throw std::invalid_argument("eltwise_mul: incompatible shapes " +
                                    shape_str(a) + " vs " + shape_str(b));
    }
    return out;
  }

  template <typename F>
  static void broadcast_binary(Tensor<T>& out, const Tensor<T>& a,
                               const Tensor<T>& b, F f) {
    const int rank = out.rank();
    std::vector<std::int64_t> sa(rank), sb(rank);
    std::int64_t stride_a = 1, stride_b = 1;
    for (int d = rank - 1; d >= 0; --d) {
      sa[d] = (a.dim(d) == 1 && out.dim(d) != 1) ? 0 : stride_a;
      sb[d] = (b.dim(d) == 1 && out.dim(d) != 1) ? 0 : stride_b;
      stride_a *= a.dim(d);
      stride_b *= b.dim(d);
    }
    std::vector<int> idx(rank, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t i = 0; i < out.size(); ++i) {
      out[i] = f(a[oa], b[ob]);
      for (int d = rank - 1; d >= 0; --d) {
        oa += sa[d];
        ob += sb[d];
        if (++idx[d] < out.dim(d)) break;
        idx[d] = 0;
        oa -= sa[d] * out.dim(d);
        ob -= sb[d] * out.dim(d);
      }
    }
  }

  // grad(target) = sum over broadcast dims of gout * other (broadcast).
  static void reduce_product_grad(Tensor<T>& gt, const Tensor<T>& gout,
                                  const Tensor<T>& other) {
    const int rank = gout.rank();
    std::vector<std::int64_t> st(rank), so(rank);
    std::int64_t stride_t = 1, stride_o = 1;
    for (int d = rank - 1; d >= 0; --d) {
      st[d] = (gt.dim(d) == 1 && gout.dim(d) != 1) ? 0 : stride_t;
      so[d] = (other.dim(d) == 1 && gout.dim(d) != 1) ? 0 : stride_o;
      stride_t *= gt.dim(d);
      stride_o *= other.dim(d);
    }
    std::vector<int> idx(rank, 0);
    std::int64_t ot = 0, oo = 0;
    for (std::int64_t i = 0; i < gout.size(); ++i) {
      gt[ot] += gout[i] * other[oo];
      for (int d = rank - 1; d >= 0; --d) {
        ot += st[d];
        oo += so[d];
        if (++idx[d] < gout.dim(d)) break;
        idx[d] = 0;
        ot -= st[d] * gout.dim(d);
        oo -= so[d] * gout.dim(d);
      }
    }
  }

  std::deque<Node> nodes_;  // deque: node references stay valid as ops append
  std::vector<Tensor<T>> grads_;
  std::map<std::string, NodeId> param_ids_;
};

// --- gradient checking --------------------------------------------------

struct GradCheckReport {
  std::string op_name;
  double max_rel_err = 0;
  std::string worst_param;
  std::int64_t worst_index = -1;

  bool passed(double tol) const { return max_rel_err < tol; }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Central-difference check in double precision. `build` assembles the graph
// from named leaf tensors and returns the scalar loss node; it is re-run with
// perturbed leaves for every element, so the check stays independent of the
// backward implementation it verifies.
template <typename BuildFn>
GradCheckReport grad_check(const std::string& op_name,
                           const std::map<std::string, Tensor<double>>& leaves,
                           BuildFn build, double step = 1e-4) {
  GradCheckReport report;
  report.op_name = op_name;

  Graph<double> g;
  std::map<std::string, typename Graph<double>::NodeId> ids;
  for (const auto& [name, t] : leaves) ids[name] = g.parameter(name, t);
  const auto loss = build(g, ids);
  const auto grads = g.backward(loss);

  auto eval = [&](const std::map<std::string, Tensor<double>>& pts) {
    Graph<double> ge;
    std::map<std::string, typename Graph<double>::NodeId> cids;
    for (const auto& [name, t] : pts) cids[name] = ge.constant(t);
    return ge.value(build(ge, cids))[0];
  };

  std::map<std::string, Tensor<double>> work = leaves;
  for (const auto& [name, t] : leaves) {
    const Tensor<double>& analytic = grads.at(name);
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const double orig = work[name][i];
      work[name][i] = orig + step;
      const double fp = eval(work);
      work[name][i] = orig - step;
      const double fm = eval(work);
      work[name][i] = orig;
      const double numeric = (fp - fm) / (2 * step);
      const double rel = relative_error(analytic[i], numeric);
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace viewsynth
