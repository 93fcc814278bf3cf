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

// Procedural brain-like phantoms. Each subject is a set of nested noisy
// ellipses (head / CSF rim, cortical GM ribbon, WM core) from which three
// co-registered slices are rendered:
//
//   perfusion  tissue-dependent flow with a smooth multiplicative bias field,
//              optionally raised inside a disc ("activation hotspot")
//   ASL        blur(perfusion, asl_blur_sigma) + N(0, asl_noise_sigma)
//   T1         piecewise-constant tissue intensities, never activated
//   PET        blur(f(perfusion), pet_blur_sigma), f(x) = 1.3 x / (x + 0.3)
//
// f is monotone and saturating with f(0) = 0 and f(1) = 1. Blur kernels are
// truncated at 3 sigma, so an activation only changes ASL pixels within
// ceil(3 * asl_blur_sigma) of the disc and PET pixels within
// ceil(3 * pet_blur_sigma) of it.
//
// Normalization windows are the per-modality min/max of the subject's
// resting render (same seed, no activation). Activated pixels that exceed
// the window are clipped to 1, and pixels untouched by the activation keep
// bit-identical values.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "asl2pet/common.hpp"
#include "asl2pet/formats.hpp"
#include "asl2pet/slice.hpp"

namespace asl2pet {

enum class Activation { none, local_hotspot };

struct Hotspot {
  double row = 16.0;
  double col = 16.0;
  double radius = 4.0;
  /// Added perfusion as a fraction of the GM perfusion level.
  double amplitude = 0.5;
};

struct PhantomSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int tissue_classes = 3;
  Activation activation = Activation::none;
  Hotspot hotspot{};
  bool paired = true;
  int subject_id = 0;
  /// Network depth the grid must support: dims divisible by 2^(levels-1).
  int levels = 3;
};

struct PhantomParams {
  double asl_blur_sigma = 1.0;
  double pet_blur_sigma = 2.0;
  double asl_noise_sigma = 0.03;
  double pet_knee = 0.3;
};

inline constexpr PhantomParams kPhantomParams{};

inline double pet_transfer(double x) {
  const double k = kPhantomParams.pet_knee;
  return (1.0 + k) * x / (x + k);
}

inline int blur_radius(double sigma) { return static_cast<int>(std::ceil(3.0 * sigma)); }

/// Un-normalized renders plus the windows that map them onto [0, 1].
struct RawTriple {
  int height = 0, width = 0;
  std::vector<float> asl, t1, pet;
  NormRange asl_range, t1_range, pet_range;
  /// 0 background, 1 CSF, 2 GM, 3 WM.
  std::vector<std::uint8_t> tissue;
};

struct PhantomTriple {
  Slice asl;
  Slice t1;
  std::optional<Slice> pet;
  NormRange asl_range, t1_range, pet_range;
};

namespace detail {

/// Separable Gaussian blur with zero padding and a kernel truncated at 3 sigma.
inline std::vector<double> gaussian_blur(const std::vector<double>& img, int h, int w, double sigma) {
  const int r = blur_radius(sigma);
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;

  std::vector<double> tmp(img.size(), 0.0), out(img.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < w) acc += k[i + r] * img[y * w + xx];
      }
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < h) acc += k[i + r] * tmp[yy * w + x];
      }
      out[y * w + x] = acc;
    }
  return out;
}

struct Boundary {
  double base;
  std::array<double, 8> amp{};
  std::array<double, 8> phase{};

  double at(double theta) const {
    double r = base;
    for (int k = 0; k < 8; ++k) r += amp[k] * std::cos((k + 2) * theta + phase[k]);
    return r;
  }
};

struct Geometry {
  double cy, cx, ay, ax, rot;
  Boundary head, csf, gm;
  double gm_level, wm_level, csf_level;
  double bias_amp, bias_fy, bias_fx, bias_phase;
};

inline Boundary random_boundary(Rng& rng, double base, double wobble, double fine) {
  Boundary b{base};
  for (int k = 0; k < 8; ++k) {
    const double scale = k < 3 ? wobble : fine;
    b.amp[k] = scale * rng.uniform(0.3, 1.0);
    b.phase[k] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  }
  return b;
}

inline Geometry random_geometry(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 1));
  Geometry g{};
  g.cy = rng.uniform(0.47, 0.53);
  g.cx = rng.uniform(0.47, 0.53);
  g.ay = rng.uniform(0.40, 0.45);
  g.ax = rng.uniform(0.34, 0.40);
  g.rot = rng.uniform(-0.2, 0.2);
  g.head = random_boundary(rng, 1.0, 0.02, 0.005);
  g.csf = random_boundary(rng, 0.90, 0.015, 0.005);
  g.gm = random_boundary(rng, 0.62, 0.03, 0.035);
  g.gm_level = rng.uniform(0.85, 1.15);
  g.wm_level = g.gm_level * rng.uniform(0.30, 0.40);
  g.csf_level = rng.uniform(0.03, 0.08);
  g.bias_amp = rng.uniform(0.05, 0.15);
  g.bias_fy = rng.uniform(0.5, 1.5);
  g.bias_fx = rng.uniform(0.5, 1.5);
  g.bias_phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  return g;
}

inline void validate(const PhantomSpec& spec) {
  if (spec.height <= 0 || spec.width <= 0)
    fail(ErrorCode::InvalidSpec, "grid dimensions must be positive");
  if (spec.levels < 1) fail(ErrorCode::InvalidSpec, "levels must be >= 1");
  if (spec.tissue_classes < 1 || spec.tissue_classes > 3)
    fail(ErrorCode::InvalidSpec, "tissue_classes must be 1, 2 or 3");
  if (spec.activation == Activation::local_hotspot &&
      (spec.hotspot.radius <= 0.0 || spec.hotspot.amplitude < 0.0))
    fail(ErrorCode::InvalidSpec, "hotspot radius must be positive and amplitude non-negative");
  const int div = 1 << (spec.levels - 1);
  if (spec.height % div != 0 || spec.width % div != 0)
    fail(ErrorCode::InvalidGrid, "grid " + std::to_string(spec.height) + "x" +
                                     std::to_string(spec.width) + " is not divisible by " +
                                     std::to_string(div));
}

inline NormRange min_max(const std::vector<float>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  NormRange r{*lo, *hi};
  if (!(r.hi > r.lo)) r.hi = r.lo + 1.0;
  return r;
}

/// Renders one subject without normalization. `with_activation` lets the
/// resting reference be rendered from an activated spec.
inline RawTriple render(const PhantomSpec& spec, bool with_activation) {
  const int h = spec.height, w = spec.width;
  const Geometry g = random_geometry(spec.seed);
  const std::size_t n = static_cast<std::size_t>(h) * w;

  RawTriple out;
  out.height = h;
  out.width = w;
  out.tissue.assign(n, 0);
  std::vector<double> perf(n, 0.0), t1(n, 0.0);

  const double cr = std::cos(g.rot), sr = std::sin(g.rot);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dy = (y + 0.5) / h - g.cy, dx = (x + 0.5) / w - g.cx;
      const double u = (cr * dx + sr * dy) / g.ax, v = (-sr * dx + cr * dy) / g.ay;
      const double rho = std::sqrt(u * u + v * v);
      const double theta = std::atan2(v, u);
      std::uint8_t t = 0;
      if (rho <= g.head.at(theta)) {
        t = 1;
        if (spec.tissue_classes < 3 || rho <= g.csf.at(theta)) t = 2;
        if (spec.tissue_classes >= 2 && rho <= g.gm.at(theta)) t = 3;
      }
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      out.tissue[i] = t;
      const double bias =
          1.0 + g.bias_amp * std::sin(2.0 * 3.14159265358979323846 *
                                          (g.bias_fy * (y + 0.5) / h + g.bias_fx * (x + 0.5) / w) +
                                      g.bias_phase);
      switch (t) {
        case 1: perf[i] = g.csf_level; t1[i] = 0.15; break;
        case 2: perf[i] = g.gm_level * bias; t1[i] = 0.60; break;
        case 3: perf[i] = g.wm_level * bias; t1[i] = 1.00; break;
        default: break;
      }
    }

  if (with_activation && spec.activation == Activation::local_hotspot) {
    const auto& hs = spec.hotspot;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const double dy = y - hs.row, dx = x - hs.col;
        if (out.tissue[i] != 0 && dy * dy + dx * dx <= hs.radius * hs.radius)
          perf[i] += hs.amplitude * g.gm_level;
      }
  }

  const auto asl_clean = gaussian_blur(perf, h, w, kPhantomParams.asl_blur_sigma);
  std::vector<double> mapped(n);
  for (std::size_t i = 0; i < n; ++i) mapped[i] = pet_transfer(perf[i]);
  const auto pet = gaussian_blur(mapped, h, w, kPhantomParams.pet_blur_sigma);

  Rng noise(derive_seed(spec.seed, 2));
  out.asl.resize(n);
  out.t1.resize(n);
  out.pet.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.asl[i] = static_cast<float>(asl_clean[i] + kPhantomParams.asl_noise_sigma * noise.normal());
    out.t1[i] = static_cast<float>(t1[i]);
    out.pet[i] = static_cast<float>(pet[i]);
  }
  return out;
}

}  // namespace detail

/// Raw renders with resting-state normalization windows attached.
inline RawTriple render_raw(const PhantomSpec& spec) {
  detail::validate(spec);
  RawTriple raw = detail::render(spec, true);
  const RawTriple rest =
      spec.activation == Activation::none ? raw : detail::render(spec, false);
  raw.asl_range = detail::min_max(rest.asl);
  raw.t1_range = detail::min_max(rest.t1);
  raw.pet_range = detail::min_max(rest.pet);
  return raw;
}

inline PhantomTriple generate_subject(const PhantomSpec& spec) {
  const RawTriple raw = render_raw(spec);
  const int h = raw.height, w = raw.width, id = spec.subject_id;
  PhantomTriple out{
      normalize(raw.asl, h, w, raw.asl_range.lo, raw.asl_range.hi, Modality::ASL, id),
      normalize(raw.t1, h, w, raw.t1_range.lo, raw.t1_range.hi, Modality::T1, id),
      std::nullopt,
      raw.asl_range,
      raw.t1_range,
      raw.pet_range,
  };
  if (spec.paired)
    out.pet = normalize(raw.pet, h, w, raw.pet_range.lo, raw.pet_range.hi, Modality::PET, id);
  return out;
}

// ---------------------------------------------------------------------------
// Corpora

struct CorpusOptions {
  int height = 64;
  int width = 64;
  int levels = 3;
  /// Every other subject (odd index within its pairing class) carries a
  /// hotspot; the rest are resting.
  bool activations = true;
};

/// The PhantomSpec for subject `index` of a corpus. Subjects [0, n_paired) are
/// paired; the rest unpaired.
inline PhantomSpec corpus_subject_spec(int index, int n_paired, std::uint64_t base_seed,
                                       const CorpusOptions& opt) {
  PhantomSpec spec;
  spec.seed = derive_seed(base_seed, static_cast<std::uint64_t>(index));
  spec.height = opt.height;
  spec.width = opt.width;
  spec.levels = opt.levels;
  spec.subject_id = index;
  spec.paired = index < n_paired;
  const int class_index = spec.paired ? index : index - n_paired;
  if (opt.activations && class_index % 2 == 1) {
    // Centre the hotspot on a GM pixel of the resting anatomy.
    const RawTriple rest = detail::render(spec, false);
    std::vector<std::size_t> gm;
    for (std::size_t i = 0; i < rest.tissue.size(); ++i)
      if (rest.tissue[i] == 2) gm.push_back(i);
    if (!gm.empty()) {
      Rng rng(derive_seed(spec.seed, 3));
      const std::size_t pick = gm[rng.below(gm.size())];
      spec.activation = Activation::local_hotspot;
      spec.hotspot.row = static_cast<double>(pick / opt.width);
      spec.hotspot.col = static_cast<double>(pick % opt.width);
      spec.hotspot.radius = rng.uniform(0.05, 0.1) * std::min(opt.height, opt.width);
      spec.hotspot.amplitude = rng.uniform(0.3, 0.6);
    }
  }
  return spec;
}

/// Renders n_paired + n_unpaired subjects into `out_dir` and writes
/// `out_dir/manifest.jsonl`. A pure function of its arguments.
inline Manifest generate_corpus(int n_paired, int n_unpaired, std::uint64_t base_seed,
                                const fs::path& out_dir, const CorpusOptions& opt = {}) {
  if (n_paired < 0 || n_unpaired < 0) fail(ErrorCode::InvalidSpec, "subject counts must be >= 0");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir))
    fail(ErrorCode::IoError, "cannot create " + out_dir.string());

  Manifest manifest;
  manifest.directory = out_dir;
  for (int i = 0; i < n_paired + n_unpaired; ++i) {
    const PhantomSpec spec = corpus_subject_spec(i, n_paired, base_seed, opt);
    const RawTriple raw = render_raw(spec);
    ManifestEntry e;
    e.subject_id = i;
    e.paired = spec.paired;
    e.activated = spec.activation == Activation::local_hotspot;
    e.height = raw.height;
    e.width = raw.width;
    char stem[32];
    std::snprintf(stem, sizeof stem, "sub%04d", i);
    const std::string s(stem);
    e.files[Modality::ASL] =
        write_slice(out_dir, s + "_asl", raw.asl, raw.height, raw.width, Modality::ASL, i, raw.asl_range);
    e.files[Modality::T1] =
        write_slice(out_dir, s + "_t1", raw.t1, raw.height, raw.width, Modality::T1, i, raw.t1_range);
    if (spec.paired)
      e.files[Modality::PET] = write_slice(out_dir, s + "_pet", raw.pet, raw.height, raw.width,
                                           Modality::PET, i, raw.pet_range);
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace asl2pet
