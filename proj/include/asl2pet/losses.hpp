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

// Image metrics and training losses.
//
// SSIM uses an 11x11 Gaussian window (sigma 1.5, normalized to sum 1),
// K1 = 0.01, K2 = 0.03 and data range 1. Local statistics are same-size
// separable convolutions with mirror padding (edge sample not repeated).
// SSIM of a batch is computed per slice and then averaged.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "asl2pet/common.hpp"
#include "asl2pet/slice.hpp"
#include "asl2pet/tensor.hpp"

namespace asl2pet {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;

  double c1() const { return (k1 * data_range) * (k1 * data_range); }
  double c2() const { return (k2 * data_range) * (k2 * data_range); }

  /// Normalized 1D taps; the 2D window is their outer product.
  std::vector<double> taps() const {
    std::vector<double> g(window);
    const int r = window / 2;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) sum += g[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    for (auto& v : g) v /= sum;
    return g;
  }
};

/// Mirror index into [0, n) without repeating the edge sample.
inline int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

namespace detail {

/// Same-size separable filtering with mirror padding.
template <typename T>
void filter2d(const T* src, T* dst, int h, int w, const std::vector<double>& g, std::vector<T>& tmp) {
  const int r = static_cast<int>(g.size()) / 2;
  tmp.resize(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      T acc = 0;
      for (int k = -r; k <= r; ++k) acc += static_cast<T>(g[k + r]) * src[y * w + mirror_index(x + k, w)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      T acc = 0;
      for (int k = -r; k <= r; ++k) acc += static_cast<T>(g[k + r]) * tmp[mirror_index(y + k, h) * w + x];
      dst[static_cast<std::size_t>(y) * w + x] = acc;
    }
}

/// Adjoint of filter2d: accumulates into dst.
template <typename T>
void filter2d_adjoint(const T* src, T* dst, int h, int w, const std::vector<double>& g,
                      std::vector<T>& tmp) {
  const int r = static_cast<int>(g.size()) / 2;
  tmp.assign(static_cast<std::size_t>(h) * w, T(0));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const T v = src[static_cast<std::size_t>(y) * w + x];
      for (int k = -r; k <= r; ++k) tmp[mirror_index(y + k, h) * w + x] += static_cast<T>(g[k + r]) * v;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const T v = tmp[static_cast<std::size_t>(y) * w + x];
      for (int k = -r; k <= r; ++k) dst[y * w + mirror_index(x + k, w)] += static_cast<T>(g[k + r]) * v;
    }
}

/// SSIM of one slice; when `dx` is non-null adds scale * dSSIM/dx into it.
template <typename T>
double ssim_plane(const T* x, const T* y, int h, int w, const SsimParams& p, T* dx, T scale) {
  const auto g = p.taps();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<T> mx(n), my(n), exx(n), eyy(n), exy(n), sq(n), tmp;
  filter2d(x, mx.data(), h, w, g, tmp);
  filter2d(y, my.data(), h, w, g, tmp);
  for (std::size_t i = 0; i < n; ++i) sq[i] = x[i] * x[i];
  filter2d(sq.data(), exx.data(), h, w, g, tmp);
  for (std::size_t i = 0; i < n; ++i) sq[i] = y[i] * y[i];
  filter2d(sq.data(), eyy.data(), h, w, g, tmp);
  for (std::size_t i = 0; i < n; ++i) sq[i] = x[i] * y[i];
  filter2d(sq.data(), exy.data(), h, w, g, tmp);

  const T c1 = static_cast<T>(p.c1()), c2 = static_cast<T>(p.c2());
  std::vector<T> g_mx, g_exx, g_exy;
  if (dx) {
    g_mx.resize(n);
    g_exx.resize(n);
    g_exy.resize(n);
  }
  double total = 0.0;
  const T inv_n = scale / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T a = mx[i], b = my[i];
    const T a1 = 2 * a * b + c1;
    const T a2 = 2 * (exy[i] - a * b) + c2;
    const T b1 = a * a + b * b + c1;
    const T b2 = (exx[i] - a * a) + (eyy[i] - b * b) + c2;
    const T s = (a1 * a2) / (b1 * b2);
    total += s;
    if (dx) {
      const T bb = b1 * b2;
      g_mx[i] = inv_n * ((2 * b * a2 - 2 * b * a1) / bb - s * (2 * a / b1 - 2 * a / b2));
      g_exy[i] = inv_n * (2 * a1 / bb);
      g_exx[i] = inv_n * (-s / b2);
    }
  }
  if (dx) {
    std::vector<T> back(n, T(0));
    filter2d_adjoint(g_mx.data(), back.data(), h, w, g, tmp);
    for (std::size_t i = 0; i < n; ++i) dx[i] += back[i];
    std::fill(back.begin(), back.end(), T(0));
    filter2d_adjoint(g_exx.data(), back.data(), h, w, g, tmp);
    for (std::size_t i = 0; i < n; ++i) dx[i] += 2 * x[i] * back[i];
    std::fill(back.begin(), back.end(), T(0));
    filter2d_adjoint(g_exy.data(), back.data(), h, w, g, tmp);
    for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] * back[i];
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

struct SsimResult {
  std::vector<double> per_slice;
  double mean = 0.0;
};

/// Per-slice SSIM over a batch of single-channel images.
template <typename T>
SsimResult ssim(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p = {}) {
  require_same_shape(x.shape(), y.shape(), "ssim");
  SsimResult r;
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      r.per_slice.push_back(
          detail::ssim_plane<T>(x.plane(n, c), y.plane(n, c), x.h(), x.w(), p, nullptr, T(0)));
  double s = 0.0;
  for (double v : r.per_slice) s += v;
  r.mean = r.per_slice.empty() ? 0.0 : s / r.per_slice.size();
  return r;
}

/// Mean SSIM over the batch plus its gradient w.r.t. x, scaled by `scale`
/// and accumulated into `dx`.
template <typename T>
double ssim_backward(const Tensor<T>& x, const Tensor<T>& y, Tensor<T>& dx, T scale,
                     const SsimParams& p = {}) {
  require_same_shape(x.shape(), y.shape(), "ssim");
  require_same_shape(x.shape(), dx.shape(), "ssim gradient");
  const int planes = x.n() * x.c();
  double total = 0.0;
  const T per = scale / static_cast<T>(planes);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      total += detail::ssim_plane<T>(x.plane(n, c), y.plane(n, c), x.h(), x.w(), p, dx.plane(n, c), per);
  return total / planes;
}

inline double ssim(const Slice& x, const Slice& y, const SsimParams& p = {}) {
  if (x.height != y.height || x.width != y.width) fail(ErrorCode::ShapeMismatch, "ssim");
  const std::vector<double> xd(x.pixels.begin(), x.pixels.end()), yd(y.pixels.begin(), y.pixels.end());
  return detail::ssim_plane<double>(xd.data(), yd.data(), x.height, x.width, p, nullptr, 0.0);
}

template <typename T>
double mse(std::span<const T> x, std::span<const T> y) {
  if (x.size() != y.size()) fail(ErrorCode::ShapeMismatch, "mse");
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

template <typename T>
double mse(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "mse");
  return mse<T>(x.span(), y.span());
}

inline double mse(const Slice& x, const Slice& y) {
  if (x.height != y.height || x.width != y.width) fail(ErrorCode::ShapeMismatch, "mse");
  return mse<float>(x.pixels, y.pixels);
}

/// PSNR in dB from a mean squared error; +infinity when mse is zero.
inline double psnr_from_mse(double mse_value, double data_range = 1.0) {
  if (mse_value <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse_value);
}

template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double data_range = 1.0) {
  return psnr_from_mse(mse(x, y), data_range);
}

inline double psnr(const Slice& x, const Slice& y, double data_range = 1.0) {
  return psnr_from_mse(mse(x, y), data_range);
}

// ---------------------------------------------------------------------------
// Training losses. Both are 1 - SSIM based and hence zero exactly at equality.

template <typename T>
struct LossGrad {
  double value = 0.0;
  double pet_ssim = std::numeric_limits<double>::quiet_NaN();
  double asl_ssim = std::numeric_limits<double>::quiet_NaN();
  std::optional<Tensor<T>> d_pet;
  std::optional<Tensor<T>> d_asl;
};

/// 0.5 (1 - SSIM(pet)) + 0.5 (1 - SSIM(asl)). A null asl_recon selects the
/// single-task form 1 - SSIM(pet).
template <typename T>
LossGrad<T> paired_loss_grad(const Tensor<T>& pet_pred, const Tensor<T>& pet_gt,
                             const Tensor<T>* asl_recon, const Tensor<T>* asl_gt,
                             const SsimParams& p = {}) {
  LossGrad<T> r;
  const T w = asl_recon ? T(0.5) : T(1);
  r.d_pet = Tensor<T>(pet_pred.shape());
  r.pet_ssim = ssim_backward(pet_pred, pet_gt, *r.d_pet, -w, p);
  r.value = static_cast<double>(w) * (1.0 - r.pet_ssim);
  if (asl_recon) {
    if (!asl_gt) fail(ErrorCode::ShapeMismatch, "paired loss needs the ASL target");
    require_same_shape(pet_pred.shape(), asl_recon->shape(), "paired loss");
    r.d_asl = Tensor<T>(asl_recon->shape());
    r.asl_ssim = ssim_backward(*asl_recon, *asl_gt, *r.d_asl, -w, p);
    r.value += static_cast<double>(w) * (1.0 - r.asl_ssim);
  }
  return r;
}

template <typename T>
double paired_loss(const Tensor<T>& pet_pred, const Tensor<T>& pet_gt, const Tensor<T>* asl_recon,
                   const Tensor<T>* asl_gt, const SsimParams& p = {}) {
  const double pet = 1.0 - ssim(pet_pred, pet_gt, p).mean;
  if (!asl_recon) return pet;
  if (!asl_gt) fail(ErrorCode::ShapeMismatch, "paired loss needs the ASL target");
  require_same_shape(pet_pred.shape(), asl_recon->shape(), "paired loss");
  return 0.5 * pet + 0.5 * (1.0 - ssim(*asl_recon, *asl_gt, p).mean);
}

/// 1 - SSIM(asl).
template <typename T>
LossGrad<T> unpaired_loss_grad(const Tensor<T>& asl_recon, const Tensor<T>& asl_gt,
                               const SsimParams& p = {}) {
  LossGrad<T> r;
  r.d_asl = Tensor<T>(asl_recon.shape());
  r.asl_ssim = ssim_backward(asl_recon, asl_gt, *r.d_asl, T(-1), p);
  r.value = 1.0 - r.asl_ssim;
  return r;
}

template <typename T>
double unpaired_loss(const Tensor<T>& asl_recon, const Tensor<T>& asl_gt, const SsimParams& p = {}) {
  return 1.0 - ssim(asl_recon, asl_gt, p).mean;
}

}  // namespace asl2pet
