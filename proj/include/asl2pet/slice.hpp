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
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "asl2pet/common.hpp"

namespace asl2pet {

enum class Modality { ASL, T1, PET };

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::ASL: return "ASL";
    case Modality::T1: return "T1";
    case Modality::PET: return "PET";
  }
  return "?";
}

inline Modality modality_from_string(std::string_view s) {
  if (s == "ASL") return Modality::ASL;
  if (s == "T1") return Modality::T1;
  if (s == "PET") return Modality::PET;
  fail(ErrorCode::VersionMismatch, "unknown modality '" + std::string(s) + "'");
}

/// A single-channel 2D image, row-major.
struct Slice {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
  Modality modality = Modality::ASL;
  int subject_id = 0;

  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const Slice&) const = default;
};

/// Intensity window used to map raw values onto [0, 1].
struct NormRange {
  double lo = 0.0;
  double hi = 1.0;
  bool operator==(const NormRange&) const = default;
};

/// clip((x - lo) / (hi - lo), 0, 1).
inline std::vector<float> normalize_values(std::span<const float> raw, double lo, double hi) {
  if (!(hi > lo)) fail(ErrorCode::DegenerateRange, "hi must exceed lo");
  std::vector<float> out(raw.size());
  const double scale = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i])) fail(ErrorCode::DegenerateRange, "non-finite pixel value");
    out[i] = static_cast<float>(std::clamp((raw[i] - lo) * scale, 0.0, 1.0));
  }
  return out;
}

inline Slice normalize(std::span<const float> raw, int height, int width, double lo, double hi,
                       Modality modality = Modality::ASL, int subject_id = 0) {
  if (raw.size() != static_cast<std::size_t>(height) * width)
    fail(ErrorCode::ShapeMismatch, "raw array does not match slice dimensions");
  return Slice{height, width, normalize_values(raw, lo, hi), modality, subject_id};
}

}  // namespace asl2pet
