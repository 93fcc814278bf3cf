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
#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "asl2pet/layers.hpp"

namespace asl2pet {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with per-parameter step counts, so parameters that sit out an update
/// keep both their values and their moment estimates untouched.
template <typename T>
class Adam {
 public:
  struct Slot {
    std::vector<T> m, v;
    std::uint64_t t = 0;
  };

  explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

  const AdamOptions& options() const { return opt_; }

  /// Updates every parameter whose group is in `groups`.
  void step(const std::vector<Param<T>*>& params, std::initializer_list<Group> groups) {
    step(params, std::vector<Group>(groups));
  }

  void step(const std::vector<Param<T>*>& params, const std::vector<Group>& groups) {
    for (auto* p : params) {
      if (std::find(groups.begin(), groups.end(), p->group) == groups.end()) continue;
      Slot& s = slots_[p->name];
      if (s.m.empty()) {
        s.m.assign(p->size(), T(0));
        s.v.assign(p->size(), T(0));
      }
      ++s.t;
      const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(s.t));
      const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(s.t));
      const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
      const T step_size = static_cast<T>(opt_.lr / bc1);
      const T inv_bc2 = static_cast<T>(1.0 / bc2);
      const T eps = static_cast<T>(opt_.eps);
      for (std::size_t i = 0; i < p->size(); ++i) {
        const T g = p->grad[i];
        s.m[i] = b1 * s.m[i] + (T(1) - b1) * g;
        s.v[i] = b2 * s.v[i] + (T(1) - b2) * g * g;
        p->value[i] -= step_size * s.m[i] / (std::sqrt(s.v[i] * inv_bc2) + eps);
      }
    }
  }

  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  AdamOptions opt_;
  std::map<std::string, Slot> slots_;
};

}  // namespace asl2pet
