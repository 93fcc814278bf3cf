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

#include <filesystem>

#include "asl2pet/datasets.hpp"
#include "asl2pet/phantoms.hpp"

using namespace asl2pet;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("asl2pet_test_phantoms_" + name);
  fs::remove_all(p);
  return p;
}

bool in_unit_interval(const Slice& s) {
  for (float v : s.pixels)
    if (!(v >= 0.f && v <= 1.f)) return false;
  return true;
}

}  // namespace

TEST_CASE("resting paired subject honours the slice invariants") {
  PhantomSpec spec;
  spec.seed = 0;
  const auto t = generate_subject(spec);
  REQUIRE(t.pet.has_value());
  CHECK(t.asl.pixels.size() == 64u * 64u);
  CHECK(in_unit_interval(t.asl));
  CHECK(in_unit_interval(t.t1));
  CHECK(in_unit_interval(*t.pet));
  CHECK(t.asl.modality == Modality::ASL);
  CHECK(t.pet->modality == Modality::PET);
}

TEST_CASE("generation is bit-identical for identical specs") {
  PhantomSpec spec;
  spec.seed = 0;
  const auto a = generate_subject(spec), b = generate_subject(spec);
  CHECK(a.asl.pixels == b.asl.pixels);
  CHECK(a.t1.pixels == b.t1.pixels);
  CHECK(a.pet->pixels == b.pet->pixels);
  spec.seed = 1;
  CHECK(generate_subject(spec).asl.pixels != a.asl.pixels);
}

TEST_CASE("unpaired subjects have no PET") {
  PhantomSpec spec;
  spec.paired = false;
  CHECK_FALSE(generate_subject(spec).pet.has_value());
}

TEST_CASE("grid and phantom parameter validation") {
  PhantomSpec spec;
  spec.height = 30;  // not divisible by 4
  try {
    generate_subject(spec);
    FAIL("expected InvalidGrid");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidGrid);
  }
  spec.height = 0;
  try {
    generate_subject(spec);
    FAIL("expected InvalidSpec");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidSpec);
  }
  spec.height = 32;
  spec.width = 48;
  CHECK_NOTHROW(generate_subject(spec));
}

TEST_CASE("hotspot changes ASL and PET only near the hotspot, never T1") {
  PhantomSpec rest;
  rest.seed = 0;
  PhantomSpec act = rest;
  act.activation = Activation::local_hotspot;
  act.hotspot = {16, 16, 4, 0.5};
  const auto a = generate_subject(act), r = generate_subject(rest);
  CHECK(a.t1.pixels == r.t1.pixels);

  // Oracle: the changed set must lie inside the disc dilated by the blur support.
  auto check_local = [](const Slice& x, const Slice& y, double sigma) {
    // Separable truncated blur: square support, so the reach is diagonal.
    const double reach = 4.0 + std::sqrt(2.0) * blur_radius(sigma) + 1e-9;
    std::size_t changed = 0, outside = 0;
    for (int yy = 0; yy < 64; ++yy)
      for (int xx = 0; xx < 64; ++xx) {
        const std::size_t i = static_cast<std::size_t>(yy) * 64 + xx;
        if (x.pixels[i] == y.pixels[i]) continue;
        ++changed;
        if (std::hypot(yy - 16.0, xx - 16.0) > reach) ++outside;
      }
    CHECK(changed > 0);
    CHECK(outside == 0);
  };
  check_local(a.asl, r.asl, kPhantomParams.asl_blur_sigma);
  check_local(*a.pet, *r.pet, kPhantomParams.pet_blur_sigma);
}

TEST_CASE("pet transfer is monotone, saturating and fixes the endpoints") {
  CHECK(pet_transfer(0.0) == 0.0);
  CHECK(pet_transfer(1.0) == Catch::Approx(1.0).epsilon(1e-15));
  double prev = -1.0, prev_slope = 1e9;
  for (int i = 1; i <= 100; ++i) {
    const double x = i / 100.0, y = pet_transfer(x);
    CHECK(y > prev);
    const double slope = (y - pet_transfer(x - 0.01)) / 0.01;
    CHECK(slope < prev_slope);
    prev = y;
    prev_slope = slope;
  }
}

TEST_CASE("corpus bookkeeping and round trip") {
  const auto dir = scratch("corpus");
  const Manifest m = generate_corpus(4, 8, 7, dir);
  CHECK(m.entries.size() == 12);
  CHECK(m.paired_count() == 4);
  CHECK(fs::exists(dir / "manifest.jsonl"));

  const DatasetHandle h = load_manifest(dir / "manifest.jsonl");
  CHECK(h.paired_count() == 4);
  CHECK(h.unpaired_count() == 8);
  int activated = 0;
  for (const auto& s : h.subjects()) activated += s.activated;
  CHECK(activated == 6);

  // The loaded slices equal a direct render of the same subject spec.
  const PhantomSpec spec = corpus_subject_spec(3, 4, 7, {});
  const auto direct = generate_subject(spec);
  CHECK(h.by_id(3).asl.pixels == direct.asl.pixels);
  CHECK(h.by_id(3).pet->pixels == direct.pet->pixels);

  const auto again = scratch("corpus_again");
  const Manifest m2 = generate_corpus(4, 8, 7, again);
  CHECK(manifest_digest(m2) == manifest_digest(m));
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    for (const auto& [mod, ref] : m.entries[i].files) CHECK(m2.entries[i].files.at(mod).checksum == ref.checksum);
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST_CASE("empty corpus is a valid manifest") {
  const auto dir = scratch("empty");
  const Manifest m = generate_corpus(0, 0, 123, dir);
  CHECK(m.entries.empty());
  const DatasetHandle h = load_manifest(dir / "manifest.jsonl");
  CHECK(h.size() == 0);
  fs::remove_all(dir);
}

TEST_CASE("unwritable output directory raises IoError") {
  const auto file = scratch("blocker");
  write_file_atomic(file, "x");
  try {
    generate_corpus(1, 0, 1, file / "sub");
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoError);
  }
  fs::remove_all(file);
}
