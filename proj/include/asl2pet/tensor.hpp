/*
 * asl2pet: semi-supervised ASL/T1w to PET translation
 *
 * Copyright 2026 The asl2pet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "asl2pet/common.hpp"

namespace asl2pet {

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

/// Dense NCHW tensor with owned storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(s.size(), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  /// Pointer to channel `c` of sample `n`.
  T* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void resize(Shape s) {
    shape_ = s;
    data_.assign(s.size(), T(0));
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_{};
  std::vector<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) fail(ErrorCode::ShapeMismatch, std::string(what) + ": " + a.str() + " vs " + b.str());
}

/// Copies channels [0, src.c) of every sample of `src` into channels
/// [offset, offset + src.c) of `dst`.
template <typename T>
void copy_channels(const Tensor<T>& src, Tensor<T>& dst, int offset) {
  const std::size_t plane = src.shape().plane();
  for (int n = 0; n < src.n(); ++n)
    std::copy_n(src.plane(n, 0), plane * src.c(), dst.plane(n, offset));
}

/// Adds channels [offset, offset + dst.c) of `src` into `dst`.
template <typename T>
void add_channels(const Tensor<T>& src, int offset, Tensor<T>& dst) {
  const std::size_t count = dst.shape().plane() * dst.c();
  for (int n = 0; n < dst.n(); ++n) {
    const T* s = src.plane(n, offset);
    T* d = dst.plane(n, 0);
    for (std::size_t i = 0; i < count; ++i) d[i] += s[i];
  }
}

/// Extracts channels [offset, offset + count) into a new tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& src, int offset, int count) {
  Tensor<T> out(src.n(), count, src.h(), src.w());
  const std::size_t plane = src.shape().plane();
  for (int n = 0; n < src.n(); ++n)
    std::copy_n(src.plane(n, offset), plane * count, out.plane(n, 0));
  return out;
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  Tensor<To> out(src.shape());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace asl2pet
