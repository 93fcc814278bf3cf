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

#include "asl2pet/losses.hpp"

using namespace asl2pet;

namespace {

Tensor<double> random_image(int n, int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Tensor<double> t(n, 1, h, w);
  Rng r(seed);
  for (auto& v : t.vec()) v = r.uniform(lo, hi);
  return t;
}

Tensor<double> constant_image(int h, int w, double v) {
  Tensor<double> t(1, 1, h, w);
  t.fill(v);
  return t;
}

/// Direct (non-separable) SSIM with an explicit 2D window and reflected
/// borders, written independently of the library code.
double ssim_oracle(const Tensor<double>& x, const Tensor<double>& y) {
  const int h = x.h(), w = x.w(), r = 5;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  double win[11][11], sum = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) sum += win[i + r][j + r] = std::exp(-(i * i + j * j) / (2 * sigma * sigma));
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  double total = 0.0;
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
          const double k = win[i + r][j + r] / sum;
          const double a = x.at(0, 0, reflect(py + i, h), reflect(px + j, w));
          const double b = y.at(0, 0, reflect(py + i, h), reflect(px + j, w));
          mx += k * a;
          my += k * b;
          xx += k * a * a;
          yy += k * b * b;
          xy += k * a * b;
        }
      const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return total / (h * w);
}

double brute_mse(const std::vector<float>& a, const std::vector<float>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - b[i];
    s += d * d;
  }
  return static_cast<double>(s / a.size());
}

/// Relative error between two gradient vectors, measured in the 2-norm.
double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

}  // namespace

TEST_CASE("ssim of an image with itself is exactly one") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto x = random_image(2, 16, 24, seed);
    const auto r = ssim(x, x);
    CHECK(r.mean == 1.0);
    for (double v : r.per_slice) CHECK(v == 1.0);
  }
}

TEST_CASE("constant images reduce to the luminance term") {
  const double c1 = 1e-4;
  const double expected = (2 * 0.2 * 0.4 + c1) / (0.2 * 0.2 + 0.4 * 0.4 + c1);
  CHECK(std::abs(ssim(constant_image(16, 16, 0.2), constant_image(16, 16, 0.4)).mean - expected) < 1e-9);
  Slice a{16, 16, std::vector<float>(256, 0.25f), Modality::PET, 0};
  Slice b{16, 16, std::vector<float>(256, 0.5f), Modality::PET, 0};
  CHECK(std::abs(ssim(a, b) - (2 * 0.25 * 0.5 + c1) / (0.0625 + 0.25 + c1)) < 1e-9);
}

TEST_CASE("ssim agrees with a direct windowed oracle") {
  for (int size : {8, 12, 20}) {
    const auto x = random_image(1, size, size, 10 + size), y = random_image(1, size, size, 20 + size);
    CHECK(std::abs(ssim(x, y).mean - ssim_oracle(x, y)) < 1e-12);
  }
}

TEST_CASE("ssim is symmetric, bounded and shift sensitive") {
  const auto x = random_image(1, 16, 16, 5), y = random_image(1, 16, 16, 6);
  const double s = ssim(x, y).mean;
  CHECK(std::abs(s - ssim(y, x).mean) < 1e-12);
  CHECK(s <= 1.0);
  CHECK(s >= -1.0);
  Tensor<double> close = x;
  Rng r(9);
  for (auto& v : close.vec()) v += 0.05 * r.normal();
  Tensor<double> close_shifted = close;
  for (auto& v : close_shifted.vec()) v += 0.2;
  CHECK(ssim(x, close_shifted).mean < ssim(x, close).mean);
}

TEST_CASE("anti-correlated binary image has negative ssim") {
  Tensor<double> x(1, 1, 32, 32), inv(1, 1, 32, 32);
  for (int y = 0; y < 32; ++y)
    for (int c = 0; c < 32; ++c) {
      x.at(0, 0, y, c) = ((y / 4 + c / 4) % 2) ? 1.0 : 0.0;
      inv.at(0, 0, y, c) = 1.0 - x.at(0, 0, y, c);
    }
  const double s = ssim(x, inv).mean;
  CHECK(s < 0.0);
  CHECK(std::abs(s - ssim_oracle(x, inv)) < 1e-12);
  CHECK(unpaired_loss(inv, x) > 1.0);
}

TEST_CASE("mse and psnr against brute force") {
  Rng r(77);
  std::vector<float> a(1000), b(1000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = static_cast<float>(r.uniform());
    b[i] = static_cast<float>(r.uniform());
  }
  const Slice sa{10, 100, a, Modality::PET, 0}, sb{10, 100, b, Modality::PET, 0};
  CHECK(std::abs(mse(sa, sb) - brute_mse(a, b)) < 1e-12);
  CHECK(mse(sa, sa) == 0.0);
  CHECK(std::isinf(psnr(sa, sa)));
  CHECK(std::abs(psnr(sa, sb) - 10.0 * std::log10(1.0 / brute_mse(a, b))) < 1e-9);
  CHECK(std::abs(psnr_from_mse(0.01) - 20.0) < 1e-12);

  auto x = constant_image(8, 8, 0.3), y = constant_image(8, 8, 0.4);
  CHECK(std::abs(mse(x, y) - 0.01) < 1e-12);
  const Slice wrong{5, 200, a, Modality::PET, 0};
  CHECK_THROWS_AS(mse(sa, wrong), Error);
  CHECK_THROWS_AS(ssim(random_image(1, 8, 8, 1), random_image(1, 8, 9, 1)), Error);
}

TEST_CASE("composite losses") {
  const auto pet = random_image(2, 8, 8, 1), asl = random_image(2, 8, 8, 2);
  CHECK(paired_loss(pet, pet, &asl, &asl) == 0.0);
  CHECK(unpaired_loss(asl, asl) == 0.0);
  CHECK(paired_loss<double>(pet, pet, nullptr, nullptr) == 0.0);

  // An ASL reconstruction with SSIM exactly 0.5 against its target: use the
  // luminance-only constant pair whose SSIM solves to 0.5.
  const double c1 = 1e-4, a = 0.5;
  // (2ab + c1) / (a^2 + b^2 + c1) = 0.5  ->  b^2 - 4ab + a^2 - c1 = 0.
  const double b = 2 * a - std::sqrt(3 * a * a + c1);
  const auto ta = constant_image(8, 8, a), tb = constant_image(8, 8, b);
  REQUIRE(std::abs(ssim(ta, tb).mean - 0.5) < 1e-12);
  const auto p = constant_image(8, 8, 0.3);
  CHECK(std::abs(paired_loss(p, p, &tb, &ta) - 0.25) < 1e-12);

  const auto other = random_image(2, 8, 8, 3);
  CHECK(unpaired_loss(other, asl) == Catch::Approx(1.0 - ssim(other, asl).mean));
  CHECK(paired_loss<double>(other, pet, nullptr, nullptr) == Catch::Approx(1.0 - ssim(other, pet).mean));
  CHECK(paired_loss(other, pet, &other, &asl) >= 0.0);
}

TEST_CASE("paired loss gradients match central differences") {
  const auto gt_pet = random_image(2, 8, 8, 11), gt_asl = random_image(2, 8, 8, 12);
  auto pet = random_image(2, 8, 8, 13), asl = random_image(2, 8, 8, 14);
  const auto g = paired_loss_grad(pet, gt_pet, &asl, &gt_asl);
  CHECK(g.value == Catch::Approx(paired_loss(pet, gt_pet, &asl, &gt_asl)).epsilon(1e-12));

  const double step = 1e-3;
  auto numeric = [&](Tensor<double>& target) {
    std::vector<double> out(target.vec().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double keep = target.vec()[i];
      target.vec()[i] = keep + step;
      const double up = paired_loss(pet, gt_pet, &asl, &gt_asl);
      target.vec()[i] = keep - step;
      const double down = paired_loss(pet, gt_pet, &asl, &gt_asl);
      target.vec()[i] = keep;
      out[i] = (up - down) / (2 * step);
    }
    return out;
  };
  CHECK(relative_error(g.d_pet->vec(), numeric(pet)) < 1e-4);
  CHECK(relative_error(g.d_asl->vec(), numeric(asl)) < 1e-4);

  const auto single = paired_loss_grad<double>(pet, gt_pet, nullptr, nullptr);
  CHECK_FALSE(single.d_asl.has_value());
  for (std::size_t i = 0; i < single.d_pet->vec().size(); ++i)
    CHECK(single.d_pet->vec()[i] == Catch::Approx(2.0 * g.d_pet->vec()[i]).epsilon(1e-12));
}

TEST_CASE("unpaired loss gradient matches central differences") {
  const auto gt = random_image(1, 12, 12, 21);
  auto x = random_image(1, 12, 12, 22);
  const auto g = unpaired_loss_grad(x, gt);
  std::vector<double> num(x.vec().size());
  for (std::size_t i = 0; i < num.size(); ++i) {
    const double keep = x.vec()[i];
    x.vec()[i] = keep + 1e-3;
    const double up = unpaired_loss(x, gt);
    x.vec()[i] = keep - 1e-3;
    const double down = unpaired_loss(x, gt);
    x.vec()[i] = keep;
    num[i] = (up - down) / 2e-3;
  }
  CHECK(relative_error(g.d_asl->vec(), num) < 1e-4);
}

TEST_CASE("window taps are normalized and mirror indexing reflects") {
  const auto taps = SsimParams{}.taps();
  double s = 0;
  for (double t : taps) s += t;
  CHECK(std::abs(s - 1.0) < 1e-15);
  CHECK(taps.size() == 11);
  CHECK(mirror_index(-1, 5) == 1);
  CHECK(mirror_index(5, 5) == 3);
  CHECK(mirror_index(-6, 5) == 2);
  CHECK(mirror_index(3, 1) == 0);
}
