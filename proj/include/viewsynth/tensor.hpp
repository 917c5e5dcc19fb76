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

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace viewsynth {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense N-dimensional array, row-major. Plain value type: copying copies the
// buffer. The element type selects the working precision (float for training,
// double for gradient checking).
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), T(0));
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
      throw std::invalid_argument("tensor data length does not match shape " +
                                  shape_str(shape_));
    }
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  template <typename... Ix>
  T& at(Ix... ix) {
    return data_[static_cast<std::size_t>(offset(ix...))];
  }
  template <typename... Ix>
  const T& at(Ix... ix) const {
    return data_[static_cast<std::size_t>(offset(ix...))];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != size()) {
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " +
                                  shape_str(s) + " changes element count");
    }
    return Tensor(std::move(s), data_);
  }

  // Copy of the half-open range [start, start+len) along `axis`.
  Tensor slice(int axis, int start, int len) const {
    if (axis < 0 || axis >= rank()) throw std::invalid_argument("bad axis");
    if (start < 0 || len <= 0 || start + len > shape_[axis])
      throw std::invalid_argument("bad slice range");
    Shape out_shape = shape_;
    out_shape[axis] = len;
    Tensor out(out_shape);
    const std::int64_t inner = numel_from(axis + 1);
    const std::int64_t outer = numel_to(axis);
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* src = data_.data() + (o * shape_[axis] + start) * inner;
      T* dst = out.data() + o * len * inner;
      std::copy(src, src + len * inner, dst);
    }
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      d[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(d));
  }

  // Product of dims in [0, axis).
  std::int64_t numel_to(int axis) const {
    std::int64_t n = 1;
    for (int i = 0; i < axis; ++i) n *= shape_[i];
    return n;
  }
  // Product of dims in [axis, rank).
  std::int64_t numel_from(int axis) const {
    std::int64_t n = 1;
    for (int i = axis; i < rank(); ++i) n *= shape_[i];
    return n;
  }

 private:
  static void check_shape(const Shape& s) {
    for (int d : s)
      if (d <= 0) throw std::invalid_argument("non-positive tensor dim");
  }

  template <typename... Ix>
  std::int64_t offset(Ix... ix) const {
    const int idx[] = {static_cast<int>(ix)...};
    std::int64_t off = 0;
    for (std::size_t i = 0; i < sizeof...(ix); ++i)
      off = off * shape_[i] + idx[i];
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool tensors_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && a.vec() == b.vec();
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("shape mismatch");
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace viewsynth
