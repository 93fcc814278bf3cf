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

// Shared helpers for the test binaries.

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "asl2pet/common.hpp"
#include "asl2pet/phantoms.hpp"
#include "asl2pet/tensor.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Fresh, empty directory under the system temp dir; removed on destruction.
struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& name) : path(fs::temp_directory_path() / ("asl2pet_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
};

inline fs::path make_corpus(const fs::path& dir, int paired, int unpaired, std::uint64_t seed, int size) {
  asl2pet::CorpusOptions opt;
  opt.height = opt.width = size;
  asl2pet::generate_corpus(paired, unpaired, seed, dir, opt);
  return dir / "manifest.jsonl";
}

template <typename T>
asl2pet::Tensor<T> random_tensor(asl2pet::Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  asl2pet::Tensor<T> t(s);
  asl2pet::Rng r(seed);
  for (auto& v : t.vec()) v = static_cast<T>(r.uniform(lo, hi));
  return t;
}

/// ||a - b|| / ||b||, the usual vector form of a gradient-check error.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    num += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    den += numeric[i] * numeric[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

/// Central difference of `loss` with respect to `v[i]`.
inline double central_difference(double& v, const std::function<double()>& loss, double step = 1e-3) {
  const double keep = v;
  v = keep + step;
  const double up = loss();
  v = keep - step;
  const double down = loss();
  v = keep;
  return (up - down) / (2.0 * step);
}

/// Sum of elementwise products; a linear probe turning tensors into scalars.
inline double dot(const asl2pet::Tensor<double>& a, const asl2pet::Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.vec().size(); ++i) s += a.vec()[i] * b.vec()[i];
  return s;
}

}  // namespace testing
