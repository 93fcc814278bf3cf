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

#include <catch_amalgamated.hpp>

#include <set>

#include "asl2pet/common.hpp"
#include "asl2pet/slice.hpp"
#include "asl2pet/tensor.hpp"

using namespace asl2pet;

TEST_CASE("splitmix64 matches the reference sequence") {
  Rng r(0);
  CHECK(r.next_u64() == 0xE220A8397B1DCDAFULL);
  CHECK(r.next_u64() == 0x6E789E6AA1B965F4ULL);
  CHECK(r.next_u64() == 0x06C45D188009454FULL);
}

TEST_CASE("uniform, below and normal stay in range and are reproducible") {
  Rng a(42), b(42);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = a.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(u == b.uniform());
    const auto k = a.below(7);
    REQUIRE(k < 7);
    REQUIRE(k == b.below(7));
    const double z = a.normal();
    REQUIRE(z == b.normal());
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("permutation is a bijection and derive_seed separates tags") {
  Rng r(3);
  const auto p = permutation(50, r);
  std::set<std::size_t> seen(p.begin(), p.end());
  CHECK(seen.size() == 50);
  CHECK(*seen.rbegin() == 49);
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(9, 4) == derive_seed(9, 4));
}

TEST_CASE("fnv-1a digests match published vectors") {
  CHECK(digest_hex("") == "cbf29ce484222325");
  CHECK(digest_hex("a") == "af63dc4c8601ec8c");
  CHECK(digest_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("normalize maps and clips onto the unit interval") {
  const std::vector<float> a{0.f, 5.f, 10.f};
  CHECK(normalize_values(a, 0, 10) == std::vector<float>{0.f, 0.5f, 1.f});
  const std::vector<float> b{-1.f, 11.f};
  CHECK(normalize_values(b, 0, 10) == std::vector<float>{0.f, 1.f});
  const std::vector<float> c(5, 3.25f);
  for (float v : normalize_values(c, 2.25, 4.25)) CHECK(v == 0.5f);
  CHECK_THROWS_AS(normalize_values(a, 1, 1), Error);
  try {
    normalize_values(a, 2, 1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateRange);
  }
  const std::vector<float> bad{0.f, std::numeric_limits<float>::quiet_NaN()};
  CHECK_THROWS_AS(normalize_values(bad, 0, 1), Error);
}

TEST_CASE("tensor channel helpers") {
  Tensor<float> t(2, 3, 2, 2);
  for (std::size_t i = 0; i < t.vec().size(); ++i) t.vec()[i] = static_cast<float>(i);
  const auto s = slice_channels(t, 1, 2);
  CHECK(s.shape() == Shape{2, 2, 2, 2});
  CHECK(s.at(0, 0, 0, 0) == t.at(0, 1, 0, 0));
  CHECK(s.at(1, 1, 1, 1) == t.at(1, 2, 1, 1));
  Tensor<float> dst(2, 5, 2, 2);
  copy_channels(t, dst, 2);
  CHECK(dst.at(1, 4, 0, 1) == t.at(1, 2, 0, 1));
  CHECK(dst.at(1, 1, 0, 1) == 0.f);
  CHECK_THROWS_AS(require_same_shape(Shape{1, 1, 2, 2}, Shape{1, 1, 2, 3}, "x"), Error);
}
