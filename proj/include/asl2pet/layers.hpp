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

// Layers with explicit forward/backward passes. A layer caches whatever its
// backward pass needs during forward(); backward() accumulates parameter
// gradients and adds the input gradient into the caller's buffer. Inputs are
// passed as strided channel views so dense blocks can read growing prefixes
// of a single concatenation buffer without copies.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "asl2pet/common.hpp"
#include "asl2pet/tensor.hpp"

namespace asl2pet {

enum class Group { encoder, pet_decoder, asl_decoder, gates };

inline const char* to_string(Group g) {
  switch (g) {
    case Group::encoder: return "encoder";
    case Group::pet_decoder: return "pet_decoder";
    case Group::asl_decoder: return "asl_decoder";
    case Group::gates: return "gates";
  }
  return "?";
}

template <typename T>
struct Param {
  std::string name;
  Group group = Group::encoder;
  std::vector<T> value;
  std::vector<T> grad;

  explicit Param(std::size_t n = 0) : value(n, T(0)), grad(n, T(0)) {}
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// Running statistics and other non-trainable state that still belongs in a checkpoint.
template <typename T>
struct Buffer {
  std::string name;
  std::vector<T>* data = nullptr;
};

template <typename T>
struct Registry {
  std::vector<Param<T>*> params;
  std::vector<Buffer<T>> buffers;
  /// Batch-norm layers registered here keep this many sets of running
  /// statistics; `stat_slot` (when set) selects the active set at run time.
  int stat_slots = 1;
  const int* stat_slot = nullptr;
};

template <typename T>
struct View {
  T* data = nullptr;
  int n = 0, c = 0, h = 0, w = 0;
  std::size_t stride = 0;  // elements between samples

  T* sample(int i) const { return data + static_cast<std::size_t>(i) * stride; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return plane() * c; }
};

template <typename T>
View<T> view(Tensor<T>& t, int c0 = 0, int count = -1) {
  return {t.plane(0, c0), t.n(), count < 0 ? t.c() - c0 : count, t.h(), t.w(),
          static_cast<std::size_t>(t.c()) * t.h() * t.w()};
}

template <typename T>
View<const T> view(const Tensor<T>& t, int c0 = 0, int count = -1) {
  return {t.plane(0, c0), t.n(), count < 0 ? t.c() - c0 : count, t.h(), t.w(),
          static_cast<std::size_t>(t.c()) * t.h() * t.w()};
}

template <typename T>
View<const T> as_const(const View<T>& v) {
  return {v.data, v.n, v.c, v.h, v.w, v.stride};
}

/// Batch-norm behaviour for one forward pass.
enum class BnMode {
  train,         // batch statistics, running averages updated
  train_frozen,  // batch statistics, running averages untouched
  eval,          // running averages
};

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
void he_normal(std::vector<T>& w, int fan_in, Rng& rng, double gain = 2.0) {
  const double std = std::sqrt(gain / fan_in);
  for (auto& v : w) v = static_cast<T>(std * rng.normal());
}

// ---------------------------------------------------------------------------

/// Square k x k convolution, stride 1, zero "same" padding.
template <typename T>
class Conv2d {
 public:
  Conv2d(int cin, int cout, int k, bool bias)
      : cin_(cin), cout_(cout), k_(k), weight_(static_cast<std::size_t>(cout) * cin * k * k),
        bias_(bias ? static_cast<std::size_t>(cout) : 0) {}

  void init(Rng& rng, double gain = 2.0) { he_normal(weight_.value, cin_ * k_ * k_, rng, gain); }

  void register_params(Registry<T>& reg, const std::string& name, Group g) {
    weight_.name = name + ".weight";
    weight_.group = g;
    reg.params.push_back(&weight_);
    if (bias_.size()) {
      bias_.name = name + ".bias";
      bias_.group = g;
      reg.params.push_back(&bias_);
    }
  }

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

  void forward(View<const T> x, View<T> y) {
    x_ = x;
    const int hw = x.h * x.w, kk = cin_ * k_ * k_;
    CMapR<T> wmat(weight_.value.data(), cout_, kk);
    for (int n = 0; n < x.n; ++n) {
      MapR<T> out(y.sample(n), cout_, hw);
      if (k_ == 1) {
        out.noalias() = wmat * CMapR<T>(x.sample(n), cin_, hw);
      } else {
        im2col(x.sample(n), x.h, x.w);
        out.noalias() = wmat * CMapR<T>(col_.data(), kk, hw);
      }
      if (bias_.size())
        for (int o = 0; o < cout_; ++o) out.row(o).array() += bias_.value[o];
    }
  }

  /// `dx` may have a null data pointer when the input gradient is not needed.
  void backward(View<const T> dy, View<T> dx) {
    const View<const T>& x = x_;
    const int hw = x.h * x.w, kk = cin_ * k_ * k_;
    CMapR<T> wmat(weight_.value.data(), cout_, kk);
    MapR<T> dw(weight_.grad.data(), cout_, kk);
    for (int n = 0; n < x.n; ++n) {
      CMapR<T> g(dy.sample(n), cout_, hw);
      // Plain loop: a vectorized reduction's order depends on buffer alignment.
      if (bias_.size())
        for (int o = 0; o < cout_; ++o) {
          const T* row = dy.sample(n) + static_cast<std::size_t>(o) * hw;
          T acc = 0;
          for (int j = 0; j < hw; ++j) acc += row[j];
          bias_.grad[o] += acc;
        }
      if (k_ == 1) {
        CMapR<T> in(x.sample(n), cin_, hw);
        dw.noalias() += g * in.transpose();
        if (dx.data) {
          MapR<T> din(dx.sample(n), cin_, hw);
          din.noalias() += wmat.transpose() * g;
        }
      } else {
        im2col(x.sample(n), x.h, x.w);
        dw.noalias() += g * CMapR<T>(col_.data(), kk, hw).transpose();
        if (dx.data) {
          dcol_.resize(static_cast<std::size_t>(kk) * hw);
          MapR<T>(dcol_.data(), kk, hw).noalias() = wmat.transpose() * g;
          col2im(dx.sample(n), x.h, x.w);
        }
      }
    }
  }

 private:
  void im2col(const T* src, int h, int w) {
    const int r = k_ / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    col_.resize(static_cast<std::size_t>(cin_) * k_ * k_ * hw);
    T* dst = col_.data();
    for (int c = 0; c < cin_; ++c) {
      const T* plane = src + c * hw;
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx, dst += hw) {
          const int oy = ky - r, ox = kx - r;
          for (int y = 0; y < h; ++y) {
            T* row = dst + static_cast<std::size_t>(y) * w;
            const int sy = y + oy;
            if (sy < 0 || sy >= h) {
              std::fill(row, row + w, T(0));
              continue;
            }
            const T* srow = plane + static_cast<std::size_t>(sy) * w;
            const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
            for (int x = 0; x < x0; ++x) row[x] = T(0);
            std::copy(srow + x0 + ox, srow + x1 + ox, row + x0);
            for (int x = x1; x < w; ++x) row[x] = T(0);
          }
        }
    }
  }

  void col2im(T* dst, int h, int w) const {
    const int r = k_ / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const T* src = dcol_.data();
    for (int c = 0; c < cin_; ++c) {
      T* plane = dst + c * hw;
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx, src += hw) {
          const int oy = ky - r, ox = kx - r;
          for (int y = 0; y < h; ++y) {
            const int sy = y + oy;
            if (sy < 0 || sy >= h) continue;
            const T* row = src + static_cast<std::size_t>(y) * w;
            T* prow = plane + static_cast<std::size_t>(sy) * w;
            const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
            for (int x = x0; x < x1; ++x) prow[x + ox] += row[x];
          }
        }
    }
  }

  int cin_, cout_, k_;
  Param<T> weight_, bias_;
  View<const T> x_{};
  std::vector<T> col_, dcol_;
};

// ---------------------------------------------------------------------------

template <typename T>
class BatchNorm2d {
 public:
  explicit BatchNorm2d(int c, double momentum = 0.1, double eps = 1e-5)
      : c_(c), momentum_(momentum), eps_(eps), gamma_(c), beta_(c),
        running_mean_{std::vector<T>(c, T(0)), std::vector<T>(c, T(0))},
        running_var_{std::vector<T>(c, T(1)), std::vector<T>(c, T(1))} {
    std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
  }

  void register_params(Registry<T>& reg, const std::string& name, Group g) {
    gamma_.name = name + ".gamma";
    beta_.name = name + ".beta";
    gamma_.group = beta_.group = g;
    reg.params.push_back(&gamma_);
    reg.params.push_back(&beta_);
    reg.buffers.push_back({name + ".running_mean", &running_mean_[0]});
    reg.buffers.push_back({name + ".running_var", &running_var_[0]});
    if (reg.stat_slots > 1) {
      reg.buffers.push_back({name + ".fine_running_mean", &running_mean_[1]});
      reg.buffers.push_back({name + ".fine_running_var", &running_var_[1]});
    }
    slot_ = reg.stat_slot;
  }

  /// In place on `x`; caches the normalized activations for backward.
  void forward(Tensor<T>& x, BnMode mode) {
    const int n = x.n();
    const std::size_t hw = x.shape().plane();
    const double count = static_cast<double>(n) * hw;
    mode_ = mode;
    std::vector<T>& running_mean = running_mean_[slot_ ? *slot_ : 0];
    std::vector<T>& running_var = running_var_[slot_ ? *slot_ : 0];
    xhat_.resize(x.shape());
    invstd_.assign(c_, T(0));
    for (int c = 0; c < c_; ++c) {
      double mean, var;
      if (mode == BnMode::eval) {
        mean = running_mean[c];
        var = running_var[c];
      } else {
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
          const T* p = x.plane(i, c);
          for (std::size_t j = 0; j < hw; ++j) s += p[j];
        }
        mean = s / count;
        double ss = 0.0;
        for (int i = 0; i < n; ++i) {
          const T* p = x.plane(i, c);
          for (std::size_t j = 0; j < hw; ++j) {
            const double d = p[j] - mean;
            ss += d * d;
          }
        }
        var = ss / count;
        if (mode == BnMode::train) {
          const double unbiased = count > 1 ? ss / (count - 1) : var;
          running_mean[c] = static_cast<T>((1 - momentum_) * running_mean[c] + momentum_ * mean);
          running_var[c] = static_cast<T>((1 - momentum_) * running_var[c] + momentum_ * unbiased);
        }
      }
      const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
      const T m = static_cast<T>(mean);
      invstd_[c] = istd;
      const T g = gamma_.value[c], b = beta_.value[c];
      for (int i = 0; i < n; ++i) {
        T* p = x.plane(i, c);
        T* xh = xhat_.plane(i, c);
        for (std::size_t j = 0; j < hw; ++j) {
          xh[j] = (p[j] - m) * istd;
          p[j] = g * xh[j] + b;
        }
      }
    }
  }

  /// In place: `dy` becomes the input gradient.
  void backward(Tensor<T>& dy) {
    const int n = dy.n();
    const std::size_t hw = dy.shape().plane();
    const double count = static_cast<double>(n) * hw;
    for (int c = 0; c < c_; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* g = dy.plane(i, c);
        const T* xh = xhat_.plane(i, c);
        for (std::size_t j = 0; j < hw; ++j) {
          sum_dy += g[j];
          sum_dy_xhat += g[j] * xh[j];
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
      beta_.grad[c] += static_cast<T>(sum_dy);
      const T scale = gamma_.value[c] * invstd_[c];
      if (mode_ == BnMode::eval) {
        for (int i = 0; i < n; ++i) {
          T* g = dy.plane(i, c);
          for (std::size_t j = 0; j < hw; ++j) g[j] *= scale;
        }
        continue;
      }
      const T mean_dy = static_cast<T>(sum_dy / count);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
      for (int i = 0; i < n; ++i) {
        T* g = dy.plane(i, c);
        const T* xh = xhat_.plane(i, c);
        for (std::size_t j = 0; j < hw; ++j) g[j] = scale * (g[j] - mean_dy - xh[j] * mean_dy_xhat);
      }
    }
  }

 private:
  int c_;
  double momentum_, eps_;
  Param<T> gamma_, beta_;
  std::array<std::vector<T>, 2> running_mean_, running_var_;
  const int* slot_ = nullptr;
  BnMode mode_ = BnMode::train;
  Tensor<T> xhat_;
  std::vector<T> invstd_;
};

// ---------------------------------------------------------------------------

/// 3x3 conv (no bias) -> batch norm -> ReLU, writing into a caller-owned view.
template <typename T>
class ConvBnRelu {
 public:
  ConvBnRelu(int cin, int cout) : conv_(cin, cout, 3, false), bn_(cout) {}

  void init(Rng& rng) { conv_.init(rng); }
  void register_params(Registry<T>& reg, const std::string& name, Group g) {
    conv_.register_params(reg, name + ".conv", g);
    bn_.register_params(reg, name + ".bn", g);
  }
  int out_channels() const { return conv_.out_channels(); }

  void forward(View<const T> x, View<T> y, BnMode mode) {
    z_.resize(Shape{x.n, conv_.out_channels(), x.h, x.w});
    conv_.forward(x, view(z_));
    bn_.forward(z_, mode);
    const std::size_t count = y.sample_size();
    for (int n = 0; n < x.n; ++n) {
      const T* src = z_.plane(n, 0);
      T* dst = y.sample(n);
      for (std::size_t i = 0; i < count; ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
    }
  }

  void backward(View<const T> dy, View<T> dx) {
    const std::size_t count = dy.sample_size();
    for (int n = 0; n < dy.n; ++n) {
      T* z = z_.plane(n, 0);
      const T* g = dy.sample(n);
      for (std::size_t i = 0; i < count; ++i) z[i] = z[i] > T(0) ? g[i] : T(0);
    }
    bn_.backward(z_);
    conv_.backward(view(std::as_const(z_)), dx);
  }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  Tensor<T> z_;  // pre-activation, reused as its own gradient during backward
};

/// Dense block: layer i sees the concatenation of the block input and the
/// outputs of layers 0..i-1; a 1x1 transition maps the full concatenation to
/// `cout` channels.
template <typename T>
class DenseBlock {
 public:
  DenseBlock(int cin, int growth, int layers, int cout)
      : cin_(cin), growth_(growth), transition_(cin + layers * growth, cout, 1, true) {
    for (int i = 0; i < layers; ++i) layers_.emplace_back(cin + i * growth, growth);
  }

  void init(Rng& rng) {
    for (auto& l : layers_) l.init(rng);
    transition_.init(rng, 1.0);
  }

  void register_params(Registry<T>& reg, const std::string& name, Group g) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].register_params(reg, name + ".layer" + std::to_string(i), g);
    transition_.register_params(reg, name + ".transition", g);
  }

  int in_channels() const { return cin_; }
  int out_channels() const { return transition_.out_channels(); }
  int depth() const { return static_cast<int>(layers_.size()); }

  Tensor<T> forward(const Tensor<T>& x, BnMode mode) {
    const int total = transition_.in_channels();
    buf_.resize(Shape{x.n(), total, x.h(), x.w()});
    copy_channels(x, buf_, 0);
    for (int i = 0; i < depth(); ++i) {
      const int c = cin_ + i * growth_;
      layers_[i].forward(view(std::as_const(buf_), 0, c), view(buf_, c, growth_), mode);
    }
    Tensor<T> out(x.n(), out_channels(), x.h(), x.w());
    transition_.forward(view(std::as_const(buf_)), view(out));
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    dbuf_.resize(buf_.shape());
    transition_.backward(view(dy), view(dbuf_));
    for (int i = depth() - 1; i >= 0; --i) {
      const int c = cin_ + i * growth_;
      layers_[i].backward(view(std::as_const(dbuf_), c, growth_), view(dbuf_, 0, c));
    }
    return slice_channels(dbuf_, 0, cin_);
  }

 private:
  int cin_, growth_;
  std::vector<ConvBnRelu<T>> layers_;
  Conv2d<T> transition_;
  Tensor<T> buf_, dbuf_;
};

// ---------------------------------------------------------------------------

template <typename T>
class MaxPool2 {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    in_shape_ = x.shape();
    const int h = x.h() / 2, w = x.w() / 2;
    Tensor<T> y(x.n(), x.c(), h, w);
    arg_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < x.c(); ++c) {
        const T* p = x.plane(n, c);
        const std::size_t base = p - x.data();
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx, ++o) {
            std::size_t best = static_cast<std::size_t>(2 * yy) * x.w() + 2 * xx;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t idx = static_cast<std::size_t>(2 * yy + dy) * x.w() + 2 * xx + dx;
                if (p[idx] > p[best]) best = idx;
              }
            y[o] = p[best];
            arg_[o] = base + best;
          }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx(in_shape_);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[arg_[i]] += dy[i];
    return dx;
  }

 private:
  Shape in_shape_{};
  std::vector<std::size_t> arg_;
};

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.plane(n, c);
      T* q = y.plane(n, c);
      for (int yy = 0; yy < y.h(); ++yy)
        for (int xx = 0; xx < y.w(); ++xx)
          q[static_cast<std::size_t>(yy) * y.w() + xx] = p[(yy / 2) * x.w() + xx / 2];
    }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) {
      const T* p = dy.plane(n, c);
      T* q = dx.plane(n, c);
      for (int yy = 0; yy < dy.h(); ++yy)
        for (int xx = 0; xx < dy.w(); ++xx)
          q[(yy / 2) * dx.w() + xx / 2] += p[static_cast<std::size_t>(yy) * dy.w() + xx];
    }
  return dx;
}

/// Nearest-neighbour 2x upsample followed by conv-BN-ReLU.
template <typename T>
class UpConv {
 public:
  UpConv(int cin, int cout) : block_(cin, cout) {}
  void init(Rng& rng) { block_.init(rng); }
  void register_params(Registry<T>& reg, const std::string& name, Group g) {
    block_.register_params(reg, name, g);
  }
  int out_channels() const { return block_.out_channels(); }

  Tensor<T> forward(const Tensor<T>& x, BnMode mode) {
    up_ = upsample2(x);
    Tensor<T> y(x.n(), out_channels(), up_.h(), up_.w());
    block_.forward(view(std::as_const(up_)), view(y), mode);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dup(up_.shape());
    block_.backward(view(dy), view(dup));
    return upsample2_backward(dup);
  }

 private:
  ConvBnRelu<T> block_;
  Tensor<T> up_;
};

template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

/// 1x1 conv to a single channel followed by a sigmoid.
template <typename T>
class OutputHead {
 public:
  explicit OutputHead(int cin) : conv_(cin, 1, 1, true) {}
  void init(Rng& rng) { conv_.init(rng, 1.0); }
  void register_params(Registry<T>& reg, const std::string& name, Group g) {
    conv_.register_params(reg, name, g);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    y_ = Tensor<T>(x.n(), 1, x.h(), x.w());
    conv_.forward(view(x), view(y_));
    for (auto& v : y_.vec()) v = sigmoid(v);
    return y_;
  }

  /// Returns the gradient w.r.t. the head input.
  Tensor<T> backward(const Tensor<T>& dy, Shape in_shape) {
    Tensor<T> dz(dy.shape());
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = dy[i] * y_[i] * (T(1) - y_[i]);
    Tensor<T> dx(in_shape);
    conv_.backward(view(std::as_const(dz)), view(dx));
    return dx;
  }

 private:
  Conv2d<T> conv_;
  Tensor<T> y_;
};

// ---------------------------------------------------------------------------

/// Channel attention on a skip connection: global average pool, a
/// C -> C/reduction -> C bottleneck with ReLU, and a sigmoid producing one
/// scale in (0, 1) per channel that multiplies the whole feature plane.
template <typename T>
class ChannelGate {
 public:
  explicit ChannelGate(int channels, int reduction = 4)
      : c_(channels), hidden_(std::max(1, channels / reduction)),
        w1_(static_cast<std::size_t>(hidden_) * c_), b1_(hidden_),
        w2_(static_cast<std::size_t>(c_) * hidden_), b2_(c_) {}

  /// Closed-form parameter count for a gate on `channels` channels.
  static std::size_t parameter_count(int channels, int reduction = 4) {
    const std::size_t c = channels, h = std::max(1, channels / reduction);
    return h * c + h + c * h + c;
  }

  void init(Rng& rng) {
    he_normal(w1_.value, c_, rng);
    he_normal(w2_.value, hidden_, rng, 1.0);
  }

  void register_params(Registry<T>& reg, const std::string& name, Group g) {
    w1_.name = name + ".fc1.weight";
    b1_.name = name + ".fc1.bias";
    w2_.name = name + ".fc2.weight";
    b2_.name = name + ".fc2.bias";
    for (auto* p : {&w1_, &b1_, &w2_, &b2_}) {
      p->group = g;
      reg.params.push_back(p);
    }
  }

  std::vector<Param<T>*> params() { return {&w1_, &b1_, &w2_, &b2_}; }
  int channels() const { return c_; }

  /// Per-sample scales from the last forward(), N x C.
  const std::vector<T>& scales() const { return s_; }

  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    const int n = x.n();
    const std::size_t hw = x.shape().plane();
    pooled_.assign(static_cast<std::size_t>(n) * c_, T(0));
    hid_.assign(static_cast<std::size_t>(n) * hidden_, T(0));
    s_.assign(static_cast<std::size_t>(n) * c_, T(0));
    Tensor<T> y(x.shape());
    for (int i = 0; i < n; ++i) {
      T* g = &pooled_[static_cast<std::size_t>(i) * c_];
      for (int c = 0; c < c_; ++c) {
        const T* p = x.plane(i, c);
        T acc = 0;
        for (std::size_t j = 0; j < hw; ++j) acc += p[j];
        g[c] = acc / static_cast<T>(hw);
      }
      T* h = &hid_[static_cast<std::size_t>(i) * hidden_];
      for (int k = 0; k < hidden_; ++k) {
        T acc = b1_.value[k];
        for (int c = 0; c < c_; ++c) acc += w1_.value[static_cast<std::size_t>(k) * c_ + c] * g[c];
        h[k] = acc > T(0) ? acc : T(0);
      }
      T* s = &s_[static_cast<std::size_t>(i) * c_];
      for (int c = 0; c < c_; ++c) {
        T acc = b2_.value[c];
        for (int k = 0; k < hidden_; ++k)
          acc += w2_.value[static_cast<std::size_t>(c) * hidden_ + k] * h[k];
        s[c] = sigmoid(acc);
        const T* p = x.plane(i, c);
        T* q = y.plane(i, c);
        for (std::size_t j = 0; j < hw; ++j) q[j] = p[j] * s[c];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int n = x_.n();
    const std::size_t hw = x_.shape().plane();
    Tensor<T> dx(x_.shape());
    std::vector<T> dz2(c_), dh(hidden_), dg(c_);
    for (int i = 0; i < n; ++i) {
      const T* s = &s_[static_cast<std::size_t>(i) * c_];
      const T* h = &hid_[static_cast<std::size_t>(i) * hidden_];
      const T* g = &pooled_[static_cast<std::size_t>(i) * c_];
      for (int c = 0; c < c_; ++c) {
        const T* gy = dy.plane(i, c);
        const T* px = x_.plane(i, c);
        T* gx = dx.plane(i, c);
        T ds = 0;
        for (std::size_t j = 0; j < hw; ++j) {
          ds += gy[j] * px[j];
          gx[j] = gy[j] * s[c];
        }
        dz2[c] = ds * s[c] * (T(1) - s[c]);
        b2_.grad[c] += dz2[c];
      }
      std::fill(dh.begin(), dh.end(), T(0));
      for (int c = 0; c < c_; ++c)
        for (int k = 0; k < hidden_; ++k) {
          w2_.grad[static_cast<std::size_t>(c) * hidden_ + k] += dz2[c] * h[k];
          dh[k] += w2_.value[static_cast<std::size_t>(c) * hidden_ + k] * dz2[c];
        }
      std::fill(dg.begin(), dg.end(), T(0));
      for (int k = 0; k < hidden_; ++k) {
        if (h[k] <= T(0)) continue;
        b1_.grad[k] += dh[k];
        for (int c = 0; c < c_; ++c) {
          w1_.grad[static_cast<std::size_t>(k) * c_ + c] += dh[k] * g[c];
          dg[c] += w1_.value[static_cast<std::size_t>(k) * c_ + c] * dh[k];
        }
      }
      for (int c = 0; c < c_; ++c) {
        const T share = dg[c] / static_cast<T>(hw);
        T* gx = dx.plane(i, c);
        for (std::size_t j = 0; j < hw; ++j) gx[j] += share;
      }
    }
    return dx;
  }

 private:
  int c_, hidden_;
  Param<T> w1_, b1_, w2_, b2_;
  Tensor<T> x_;
  std::vector<T> pooled_, hid_, s_;
};

/// Spatial attention over the ASL reconstruction residual:
/// mask = sigmoid(w * |asl_in - asl_recon| + b), divided per slice by its
/// maximum whenever that slice's residual is not identically zero.
template <typename T>
class SpatialGate {
 public:
  SpatialGate() : w_(1), b_(1) {
    w_.value[0] = T(4);
    b_.value[0] = T(-2);
  }

  void register_params(Registry<T>& reg, const std::string& name, Group g) {
    w_.name = name + ".weight";
    b_.name = name + ".bias";
    w_.group = b_.group = g;
    reg.params.push_back(&w_);
    reg.params.push_back(&b_);
  }

  Param<T>& weight() { return w_; }
  Param<T>& bias() { return b_; }

  Tensor<T> forward(const Tensor<T>& asl_in, const Tensor<T>& asl_recon) {
    require_same_shape(asl_in.shape(), asl_recon.shape(), "residual attention");
    if (asl_in.c() != 1) fail(ErrorCode::ShapeMismatch, "residual attention expects one channel");
    in_ = asl_in;
    recon_ = asl_recon;
    const int n = asl_in.n();
    const std::size_t hw = asl_in.shape().plane();
    sig_ = Tensor<T>(asl_in.shape());
    argmax_.assign(n, 0);
    rescaled_.assign(n, false);
    Tensor<T> mask(asl_in.shape());
    const T w = w_.value[0], b = b_.value[0];
    for (int i = 0; i < n; ++i) {
      const T* a = asl_in.plane(i, 0);
      const T* r = asl_recon.plane(i, 0);
      T* s = sig_.plane(i, 0);
      bool nonzero = false;
      std::size_t best = 0;
      for (std::size_t j = 0; j < hw; ++j) {
        const T res = std::abs(a[j] - r[j]);
        nonzero = nonzero || res != T(0);
        s[j] = sigmoid(w * res + b);
        if (s[j] > s[best]) best = j;
      }
      argmax_[i] = best;
      rescaled_[i] = nonzero;
      T* m = mask.plane(i, 0);
      const T peak = nonzero ? s[best] : T(1);
      for (std::size_t j = 0; j < hw; ++j) m[j] = std::min(T(1), s[j] / peak);
    }
    return mask;
  }

  struct Grads {
    Tensor<T> d_asl_in;
    Tensor<T> d_asl_recon;
  };

  Grads backward(const Tensor<T>& dmask) {
    const int n = in_.n();
    const std::size_t hw = in_.shape().plane();
    Grads out{Tensor<T>(in_.shape()), Tensor<T>(in_.shape())};
    const T w = w_.value[0];
    std::vector<T> ds(hw);
    for (int i = 0; i < n; ++i) {
      const T* s = sig_.plane(i, 0);
      const T* gm = dmask.plane(i, 0);
      if (rescaled_[i]) {
        const std::size_t k = argmax_[i];
        const T peak = s[k];
        T dot = 0;
        for (std::size_t j = 0; j < hw; ++j) {
          ds[j] = gm[j] / peak;
          dot += gm[j] * s[j];
        }
        ds[k] -= dot / (peak * peak);
      } else {
        for (std::size_t j = 0; j < hw; ++j) ds[j] = gm[j];
      }
      const T* a = in_.plane(i, 0);
      const T* r = recon_.plane(i, 0);
      T* da = out.d_asl_in.plane(i, 0);
      T* dr = out.d_asl_recon.plane(i, 0);
      for (std::size_t j = 0; j < hw; ++j) {
        const T dz = ds[j] * s[j] * (T(1) - s[j]);
        const T diff = a[j] - r[j];
        const T res = std::abs(diff);
        w_.grad[0] += dz * res;
        b_.grad[0] += dz;
        const T sign = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
        da[j] = dz * w * sign;
        dr[j] = -da[j];
      }
    }
    return out;
  }

 private:
  Param<T> w_, b_;
  Tensor<T> in_, recon_, sig_;
  std::vector<std::size_t> argmax_;
  std::vector<bool> rescaled_;
};

}  // namespace asl2pet
